"""PBD CLI entry point."""

import json
import math
from pathlib import Path
from typing import TYPE_CHECKING, Any

import click
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from pbd import __version__
from pbd.config import (
    CorruptionConfig,
    DecodeConfig,
    RunConfig,
    RuntimeSettings,
    dump_config,
    get_default_config,
    load_config,
    save_config,
)
from pbd.errors import ConfigError, PBDError
from pbd.utils.logging import setup_logging

if TYPE_CHECKING:
    from pbd.training.checkpoint import Checkpoint

console = Console()

EXIT_INTERNAL = 1
EXIT_USAGE = 2


def print_success(message: str) -> None:
    """Print success message."""
    console.print(f"[green]✓[/green] {message}")


def print_warning(message: str) -> None:
    console.print(f"[yellow]⚠[/yellow] {message}")


def fail(ctx: click.Context, error_type: str, message: str, code: int) -> None:
    """Print the single-line error record and exit."""
    flat = " ".join(str(message).split())
    click.echo(f"error: {error_type}: {flat}", err=True)
    ctx.exit(code)


class PBDGroup(click.Group):
    """Group that turns library errors into one stderr line and an exit code."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.Abort):
            raise
        except click.UsageError as e:
            fail(ctx, "UsageError", e.format_message(), EXIT_USAGE)
        except click.ClickException as e:
            fail(ctx, type(e).__name__, e.format_message(), EXIT_USAGE)
        except ConfigError as e:
            fail(ctx, type(e).__name__, str(e), EXIT_USAGE)
        except PBDError as e:
            fail(ctx, type(e).__name__, str(e), EXIT_INTERNAL)
        except (OSError, ValueError, RuntimeError) as e:
            fail(ctx, type(e).__name__, str(e), EXIT_INTERNAL)
        return None


def load_run_config(path: Path) -> RunConfig:
    """Load a run config and apply the PBD_PRECISION override."""
    config = load_config(path)
    settings = RuntimeSettings()
    if settings.precision is not None:
        model = config.model.model_copy(update={"precision": settings.precision})
        config = config.model_copy(update={"model": model})
    return config


def _decode_config(beam: int | None, greedy: bool, alpha: float | None, max_steps: int | None,
                   stored: dict[str, Any] | None = None) -> DecodeConfig:
    values: dict[str, Any] = dict(stored or {})
    if beam is not None:
        values["beam_size"] = beam
    if greedy:
        values["beam_size"] = 1
    if alpha is not None:
        values["length_alpha"] = alpha
    if max_steps is not None:
        values["max_steps"] = max_steps
    try:
        return DecodeConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid decode options: {e.errors()[0]['msg']}") from e


@click.group(cls=PBDGroup)
@click.version_option(version=__version__, prog_name="pbd")
@click.option("--log-level", default=None, help="Log level (default: PBD_LOG_LEVEL or INFO)")
def main(log_level: str | None) -> None:
    """PBD: pseudo-bidirectional decoding for local sequence transduction."""
    settings = RuntimeSettings()
    setup_logging(log_level or settings.log_level, settings.log_file)


@main.command()
@click.argument("config_path", type=click.Path(path_type=Path))
@click.option("--resume", type=click.Path(exists=True, path_type=Path), help="Continue from a checkpoint")
@click.option("--steps", type=int, help="Override training.steps")
def train(config_path: Path, resume: Path | None, steps: int | None) -> None:
    """Train a model; writes checkpoints and a step/loss/lr log."""
    from pbd.training.trainer import train_from_config

    config = load_run_config(config_path)
    loss_log = config.data.loss_log
    handle = None
    if loss_log is not None:
        loss_log.parent.mkdir(parents=True, exist_ok=True)
        handle = open(loss_log, "a" if resume else "w", encoding="utf-8")

    def on_log(line: str) -> None:
        if handle is not None:
            handle.write(line + "\n")
        else:
            click.echo(line)

    try:
        result = train_from_config(config, resume=resume, on_log=on_log, steps=steps)
    finally:
        if handle is not None:
            handle.close()

    print_success(f"Trained to step {result.steps}, final loss {result.final_loss:.4f}")
    if result.checkpoints:
        console.print(f"  checkpoint: {result.checkpoints[-1]}")
    if result.heldout is not None:
        console.print(
            f"  held-out exact_match {result.heldout['exact_match']:.4f}, cer {result.heldout['cer']:.4f}"
        )


def _load_for_inference(checkpoint: Path) -> "Checkpoint":
    from pbd.training.checkpoint import load_checkpoint

    ckpt = load_checkpoint(checkpoint)
    settings = RuntimeSettings()
    if settings.precision is not None and settings.precision != ckpt.model.config.precision:
        ckpt = load_checkpoint(
            checkpoint, ckpt.model.config.model_copy(update={"precision": settings.precision})
        )
    return ckpt


@main.command(name="eval")
@click.argument("checkpoint", type=click.Path(exists=True, path_type=Path))
@click.argument("tsv_path", type=click.Path(path_type=Path))
@click.option("--beam", type=int, help="Beam size (1 = greedy)")
@click.option("--greedy", is_flag=True, help="Greedy decoding (same as --beam 1)")
@click.option("--alpha", type=float, help="Length normalization exponent")
@click.option("--max-steps", type=int, help="Maximum output length")
@click.option("--json", "as_json", is_flag=True, help="Output as JSON")
def eval_command(checkpoint: Path, tsv_path: Path, beam: int | None, greedy: bool,
                 alpha: float | None, max_steps: int | None, as_json: bool) -> None:
    """Score a checkpoint on a TSV file (exact_match, cer, n_examples)."""
    from pbd.data.corpus import load_tsv
    from pbd.inference.metrics import evaluate

    ckpt = _load_for_inference(checkpoint)
    examples = load_tsv(tsv_path)
    report = evaluate(ckpt.model, ckpt.vocab, examples, _decode_config(beam, greedy, alpha, max_steps))
    if as_json:
        click.echo(json.dumps(report.to_dict(), indent=2))
        return
    for line in report.lines():
        click.echo(line)


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True, path_type=Path))
@click.argument("input_path", type=click.Path(exists=True, path_type=Path))
@click.option("--output", "-o", type=click.Path(path_type=Path), help="Output file (default: stdout)")
@click.option("--beam", type=int, help="Beam size (1 = greedy)")
@click.option("--alpha", type=float, help="Length normalization exponent")
@click.option("--max-steps", type=int, help="Maximum output length")
def decode(checkpoint: Path, input_path: Path, output: Path | None, beam: int | None,
           alpha: float | None, max_steps: int | None) -> None:
    """Correct every line of INPUT_PATH; one hypothesis per line."""
    from pbd.data.vocab import normalize_text
    from pbd.inference.metrics import decode_texts

    ckpt = _load_for_inference(checkpoint)
    lines = input_path.read_text(encoding="utf-8").splitlines()
    sources = [normalize_text(line) for line in lines]
    hyps, truncated = decode_texts(
        ckpt.model, ckpt.vocab, sources, _decode_config(beam, False, alpha, max_steps)
    )
    body = "".join(h + "\n" for h in hyps)
    if output is None:
        click.echo(body, nl=False)
    else:
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(body, encoding="utf-8")
        print_success(f"Wrote {len(hyps)} hypotheses to {output}")
    if truncated:
        print_warning(f"{truncated} hypotheses reached max_steps")


@main.command()
@click.argument("out_path", type=click.Path(path_type=Path))
@click.option("--words", "words_path", type=click.Path(path_type=Path), help="Word list, one per line")
@click.option("--builtin", is_flag=True, help="Use the built-in word list (default)")
@click.option("--count", type=int, help="Sample this many words with replacement")
@click.option("--p-sub", type=float, default=0.05, show_default=True)
@click.option("--p-del", type=float, default=0.04, show_default=True)
@click.option("--p-ins", type=float, default=0.04, show_default=True)
@click.option("--p-swap", type=float, default=0.02, show_default=True)
@click.option("--alphabet", default=None, help="Characters used for substitutions and insertions")
@click.option("--seed", type=int, default=0, show_default=True)
def synth(out_path: Path, words_path: Path | None, builtin: bool, count: int | None,
          p_sub: float, p_del: float, p_ins: float, p_swap: float,
          alphabet: str | None, seed: int) -> None:
    """Write corrupted<TAB>clean word pairs."""
    from pbd.data.corpus import write_tsv
    from pbd.data.corruption import load_word_list, synthesize_pairs
    from pbd.data.words import BUILTIN_WORDS

    if words_path is not None and builtin:
        raise click.UsageError("--words and --builtin are mutually exclusive")
    values: dict[str, Any] = {"p_sub": p_sub, "p_del": p_del, "p_ins": p_ins, "p_swap": p_swap, "seed": seed}
    if alphabet is not None:
        values["alphabet"] = alphabet
    try:
        corruption = CorruptionConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"invalid corruption settings: {e.errors()[0]['msg']}") from e

    words = load_word_list(words_path) if words_path is not None else list(BUILTIN_WORDS)
    pairs = synthesize_pairs(words, corruption, count)
    write_tsv(out_path, pairs)
    print_success(f"Wrote {len(pairs)} pairs to {out_path}")


@main.command()
@click.argument("config_path", type=click.Path(path_type=Path), required=False)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.pass_context
def gradcheck(ctx: click.Context, config_path: Path | None, seed: int, tolerance: float) -> None:
    """Finite-difference check of every parameter group (float64, no dropout)."""
    from pbd.diagnostics import run_model_gradcheck

    base = None
    if config_path is not None:
        base = load_config(config_path).model
        if base.vocab_size is None:
            base = base.model_copy(update={"vocab_size": 7})
    result = run_model_gradcheck(base, seed=seed, tolerance=tolerance)

    table = Table(title="Gradient check")
    table.add_column("parameter")
    table.add_column("rel. error", justify="right")
    for name, err in result.errors.items():
        table.add_row(name, f"{err:.2e}")
    console.print(table)
    if result.passed:
        print_success(f"PASS worst relative error {result.worst:.2e} < {tolerance:g}")
    else:
        console.print(f"[red]✗[/red] FAIL worst relative error {result.worst:.2e} >= {tolerance:g}")
        ctx.exit(EXIT_INTERNAL)


@main.group()
def mask() -> None:
    """Attention mask utilities."""


@mask.command("dump")
@click.option("--n", "source_len", type=click.IntRange(min=1), required=True, help="Source length")
@click.option("--m", "target_len", type=click.IntRange(min=1), required=True, help="Target length")
@click.option("--offset", type=click.IntRange(0, 1), default=1, show_default=True)
@click.option("--causal", is_flag=True, help="Plain causal mask instead")
def mask_dump(source_len: int, target_len: int, offset: int, causal: bool) -> None:
    """Print the decoder self-attention mask (1 = may attend)."""
    from pbd.attention import build_causal_mask, build_pbd_mask

    built = build_causal_mask(target_len) if causal else build_pbd_mask(source_len, target_len, offset)
    click.echo(built.render())


@main.command()
@click.argument("config_path", type=click.Path(path_type=Path))
@click.option(
    "--variants", default=None,
    help="Comma-separated subset of pbd,no_future,no_sharing,transformer,pbd_deep,transformer_deep",
)
@click.option("--beam", type=int, default=4, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Output as JSON")
def compare(config_path: Path, variants: str | None, beam: int, as_json: bool) -> None:
    """Train the ablation variants with identical seeds and compare them."""
    from pbd.experiments import VARIANTS, compare_variants

    config = load_run_config(config_path)
    names = [v.strip() for v in variants.split(",")] if variants else list(VARIANTS)
    comparison = compare_variants(config, names, beam)
    if as_json:
        click.echo(json.dumps([r.to_dict() for r in comparison.results], indent=2))
        return
    header, *rows = comparison.table()
    table = Table(title="Variant comparison")
    for col in header:
        table.add_column(col, justify="left" if col == "variant" else "right")
    for row in rows:
        table.add_row(*row)
    console.print(table)


@main.command()
@click.argument("config_path", type=click.Path(path_type=Path), required=False)
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path), help="Count a saved model")
@click.option("--vocab-size", type=int, help="Vocabulary size when the config leaves it unset")
@click.option("--breakdown", is_flag=True, help="List every stored tensor")
def count(config_path: Path | None, checkpoint: Path | None, vocab_size: int | None,
          breakdown: bool) -> None:
    """Count stored parameters (shared tensors once)."""
    from pbd.model import TransformerModel, count_params, storage_shapes
    from pbd.training.checkpoint import load_checkpoint

    if checkpoint is not None:
        model: TransformerModel | None = load_checkpoint(checkpoint).model
        model_config = model.config
    elif config_path is not None:
        model = None
        model_config = load_config(config_path).model
    else:
        raise click.UsageError("give CONFIG_PATH or --checkpoint")
    if vocab_size is not None:
        model_config = model_config.model_copy(update={"vocab_size": vocab_size})

    if model is not None:
        total, groups = count_params(model)
    else:
        model_config.check()
        groups = {name: math.prod(shape) for name, shape in storage_shapes(model_config).items()}
        total = sum(groups.values())
    click.echo(f"total: {total}")
    if breakdown:
        for name, size in groups.items():
            click.echo(f"{name}: {size}")


@main.group(name="config")
def config_group() -> None:
    """Run configuration documents."""


@config_group.command("init")
@click.argument("path", type=click.Path(path_type=Path))
@click.option("--force", is_flag=True, help="Overwrite an existing file")
def config_init(path: Path, force: bool) -> None:
    """Write the default run configuration (JSON for .json, YAML otherwise)."""
    if path.exists() and not force:
        raise ConfigError(f"{path} exists (use --force to overwrite)")
    save_config(get_default_config(), path)
    print_success(f"Wrote default config to {path}")


@config_group.command("show")
@click.argument("path", type=click.Path(path_type=Path))
@click.option("--format", "fmt", type=click.Choice(["json", "yaml"]), default="json", show_default=True)
def config_show(path: Path, fmt: str) -> None:
    """Validate a config and print it with all defaults filled in."""
    config = load_config(path)
    click.echo(dump_config(config, fmt), nl=False)  # type: ignore[arg-type]


if __name__ == "__main__":
    main()
