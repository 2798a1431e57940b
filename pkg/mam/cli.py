"""
CLI interface for mam - mutually aligned diffusion for paired time series.

Commands:
    make-synthetic          Generate a synthetic paired dataset directory
    train                   Train both denoisers on every fold of a run
    evaluate RUN_DIR        Re-evaluate a run from its checkpoints
    ablate                  Train the four loss-ablation variants
    probe RUN_DIR [...]     Probe latents of one or more runs

Common arguments:
    -h, --help              Show this help message and exit
    -v, --version           Show program's version number and exit
    --config PATH           JSON run configuration [default: desk preset]
    --preset NAME           Preset used when no config is given (desk, paper)
    --set KEY=VALUE         Dotted configuration override, repeatable
    --data SOURCE           synthetic:NAME, a dataset directory or a CSV file
    --out DIR               Output directory
    --seed N                Seed for data, folds, training and evaluation
    --align METHOD          llma, simclr, barlow, vicreg, mse or none
    --epochs N              Training epochs
    --verbose               Debug logging

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error,
4 numerical failure. ``MAM_NUM_THREADS`` caps worker parallelism.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from rich.panel import Panel
from rich.text import Text

from mam.config import ALIGN_ALIASES, ALIGN_METHODS, PRESETS, RunConfig, load_config, preset
from mam.main import cmd_ablate, cmd_evaluate, cmd_make_synthetic, cmd_probe, cmd_train
from mam.utils import MamError, apply_thread_cap, console, setup_logging

__all__ = ["create_argument_parser", "main", "parse_args", "resolve_config"]

logger = logging.getLogger(__name__)

ALIGN_CHOICES = tuple(m for m in ALIGN_METHODS if m not in ALIGN_ALIASES.values()) + tuple(ALIGN_ALIASES)


class Colors:
    BOLD = "\033[1m"
    BLUE = "\033[94m"
    GREEN = "\033[92m"
    YELLOW = "\033[93m"
    ENDC = "\033[0m"


class ColoredHelpFormatter(argparse.RawDescriptionHelpFormatter):
    """Help formatter that highlights usage and option strings."""

    def __init__(
        self,
        prog: str,
        indent_increment: int = 2,
        max_help_position: int = 30,
        width: Optional[int] = None,
        color: bool = True,
    ) -> None:
        super().__init__(prog, indent_increment, max_help_position, width)
        self.color = color

    def _format_usage(self, usage: Any, actions: Any, groups: Any, prefix: Any) -> str:  # noqa: ANN401
        usage_text = super()._format_usage(usage, actions, groups, prefix)
        if not self.color:
            return usage_text
        return usage_text.replace("usage:", f"{Colors.BOLD}{Colors.GREEN}usage:{Colors.ENDC}")

    def _format_action_invocation(self, action: argparse.Action) -> str:
        text = super()._format_action_invocation(action)
        if not self.color or not action.option_strings:
            return text
        for opt in action.option_strings:
            text = text.replace(opt, f"{Colors.BOLD}{Colors.YELLOW}{opt}{Colors.ENDC}")
        return text


def _formatter(color: bool) -> Callable[[str], ColoredHelpFormatter]:
    return lambda prog: ColoredHelpFormatter(prog, color=color)


def get_banner() -> Panel:
    """Banner shown before a command runs."""
    from mam import __version__

    text = Text("mam", style="bold blue")
    text.append(f" {__version__}", style="dim")
    text.append("  mutually aligned diffusion for paired time series", style="bold green")
    return Panel(text, expand=False, border_style="blue")


def add_version_argument(parser: argparse.ArgumentParser) -> None:
    from mam import __version__

    parser.add_argument(
        "-v",
        "--version",
        action="version",
        version="%(prog)s " + __version__,
        help="Show program's version number and exit",
    )


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """Configuration source and dotted overrides."""
    group = parser.add_argument_group("configuration")
    group.add_argument("--config", type=Path, metavar="PATH", help="JSON run configuration")
    group.add_argument(
        "--preset",
        choices=sorted(PRESETS),
        default="desk",
        help="Preset used when --config is not given [default: desk]",
    )
    group.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        dest="overrides",
        help="Dotted override such as train.lr_theta=3e-4 (repeatable)",
    )
    group.add_argument("--data", metavar="SOURCE", help="synthetic:NAME, dataset directory or CSV file")
    group.add_argument("--seed", type=int, metavar="N", help="Seed for data, folds, training and evaluation")
    group.add_argument("--align", choices=ALIGN_CHOICES, help="Alignment method")
    group.add_argument("--epochs", type=int, metavar="N", help="Training epochs")


def add_output_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=Path, metavar="DIR", help="Output directory")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")


def create_argument_parser(color: bool = True) -> argparse.ArgumentParser:
    """Create the parser with one sub-command per experiment step.

    Args:
        color: Whether to colour the help output.

    Returns:
        argparse.ArgumentParser: Configured argument parser.
    """
    parser = argparse.ArgumentParser(
        prog="mam",
        description=__doc__,
        formatter_class=_formatter(color),
    )
    add_version_argument(parser)
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    make = commands.add_parser("make-synthetic", help="Generate a synthetic dataset", formatter_class=_formatter(color))
    add_config_arguments(make)
    add_output_arguments(make)

    train = commands.add_parser("train", help="Train on every fold", formatter_class=_formatter(color))
    add_config_arguments(train)
    add_output_arguments(train)
    train.add_argument("--resume", action="store_true", help="Continue each fold from its latest checkpoint")

    evaluate = commands.add_parser("evaluate", help="Re-evaluate a run", formatter_class=_formatter(color))
    evaluate.add_argument("run_dir", type=Path, help="Run directory written by train")
    evaluate.add_argument("--data", metavar="SOURCE", help="Replace the run's data source")
    add_output_arguments(evaluate)

    ablate = commands.add_parser("ablate", help="Loss-ablation study", formatter_class=_formatter(color))
    add_config_arguments(ablate)
    add_output_arguments(ablate)

    probe = commands.add_parser("probe", help="Probe latents of trained runs", formatter_class=_formatter(color))
    probe.add_argument("run_dirs", type=Path, nargs="+", help="Run directories written by train")
    add_output_arguments(probe)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return create_argument_parser(color=sys.stdout.isatty()).parse_args(argv)


def flag_overrides(args: argparse.Namespace) -> list[str]:
    """Translate the shortcut flags into dotted overrides."""
    overrides: list[str] = []
    if args.data is not None:
        overrides.append(f"data.source={json.dumps(args.data)}")
    if args.seed is not None:
        overrides.extend(f"{section}.seed={args.seed}" for section in ("data", "folds", "train", "eval"))
    if args.align is not None:
        overrides.append(f"alignment.method={json.dumps(args.align)}")
    if args.epochs is not None:
        overrides.append(f"train.epochs={args.epochs}")
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or preset), then ``--set`` overrides, then shortcut flags.

    Raises:
        ConfigError: On unreadable files, unknown keys or invalid values.
    """
    overrides = [*args.overrides, *flag_overrides(args)]
    if args.config is not None:
        return load_config(args.config, overrides)
    return preset(args.preset).with_overrides(overrides)


def _default_out(args: argparse.Namespace, config: Optional[RunConfig]) -> Path:
    if args.out is not None:
        return args.out
    if args.command == "make-synthetic" and config is not None:
        return Path("data") / config.data.source.partition(":")[2]
    if args.command == "ablate" and config is not None:
        return Path("runs") / f"{config.name}-ablation"
    if args.command == "probe":
        return Path("runs") / "probe"
    return Path("runs") / (config.name if config is not None else "run")


def dispatch(args: argparse.Namespace) -> None:
    """Run the selected command."""
    if args.command == "evaluate":
        cmd_evaluate(args.run_dir, args.out, args.data)
        return
    if args.command == "probe":
        cmd_probe(args.run_dirs, _default_out(args, None))
        return
    config = resolve_config(args)
    out = _default_out(args, config)
    if args.command == "make-synthetic":
        cmd_make_synthetic(config, out)
    elif args.command == "train":
        cmd_train(config, out, resume=args.resume)
    elif args.command == "ablate":
        cmd_ablate(config, out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the CLI; returns the process exit code."""
    args = parse_args(argv)
    setup_logging(args.verbose)
    console.print(get_banner())
    try:
        apply_thread_cap()
        dispatch(args)
    except MamError as e:
        console.print(f"[red]{type(e).__name__}: {e}[/red]")
        logger.debug("Command failed", exc_info=True)
        return e.exit_code
    except KeyboardInterrupt:
        console.print("\n[yellow]Operation cancelled by user. Exiting...[/yellow]")
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
