from . import benchmarks, checks, config, optim, training

__all__ = ["benchmarks", "checks", "config", "optim", "training"]
