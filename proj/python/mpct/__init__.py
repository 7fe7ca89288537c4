"""Desk-scale multi-domain image-translation training laboratory.

The native core carries the work; this package adds thin wrappers around the
in-process command-line interface so experiments read naturally from Python::

    import mpct
    result = mpct.run("exp.ini", "training.epochs=5", seed=7)
    report = mpct.evaluate_checkpoint("exp.ini", ".../step-000060.mpct")
"""

from collections import namedtuple

from ._core import (
    ConfigError,
    IoError,
    NumericError,
    __version__,
    build_config_datasets,
    cli,
    evaluate_checkpoint,
    load_config,
    read_checkpoint,
    train_experiment,
    translate,
)

CliResult = namedtuple("CliResult", "code stdout stderr")


def run(config, *overrides, ablate=False, out=None, seed=None):
    """Run a full training experiment; equivalent to ``mpct run`` on the CLI."""
    args = ["run", "--config", str(config)]
    for override in overrides:
        args += ["--set", override]
    if ablate:
        args.append("--ablate-consistency")
    if out is not None:
        args += ["--out", str(out)]
    if seed is not None:
        args += ["--seed", str(seed)]
    return CliResult(*cli(args))


def evaluate(config, checkpoint, *overrides, metrics=None, out=None):
    """Score a saved checkpoint; equivalent to ``mpct eval`` on the CLI."""
    args = ["eval", "--config", str(config), "--checkpoint", str(checkpoint)]
    for override in overrides:
        args += ["--set", override]
    if metrics is not None:
        args += ["--metrics", ",".join(metrics) if not isinstance(metrics, str) else metrics]
    if out is not None:
        args += ["--out", str(out)]
    return CliResult(*cli(args))


def compare(first, second, out=None):
    """Tabulate metric deltas between two runs; ``mpct compare`` on the CLI."""
    args = ["compare", str(first), str(second)]
    if out is not None:
        args += ["--out", str(out)]
    return CliResult(*cli(args))


__all__ = [
    "CliResult",
    "ConfigError",
    "IoError",
    "NumericError",
    "__version__",
    "build_config_datasets",
    "cli",
    "compare",
    "evaluate",
    "evaluate_checkpoint",
    "load_config",
    "read_checkpoint",
    "run",
    "train_experiment",
    "translate",
]
