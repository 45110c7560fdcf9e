"""``zerodce`` command line.

Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 weights format
error, 4 gradient self-check failure.
"""

from __future__ import annotations

import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import modelio
from .enhance import benchmark, enhance, export_heatmaps, mae, psnr
from .gradcheck import run_gradcheck
from .images import ImageReadError, read_image
from .network import ArchConfig, ConfigError, init_weights
from .trainer import DatasetError, TrainConfig, TrainingDivergedError, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_SELFCHECK = 0, 1, 2, 3, 4


class SelfCheckFailed(click.ClickException):
    exit_code = EXIT_SELFCHECK


def _load(weights_path, depth=None, width=None, n_iter=None):
    weights = modelio.load_weights(weights_path)
    for name, want in (("depth", depth), ("width", width), ("n_iter", n_iter)):
        if want is not None and getattr(weights.config, name) != want:
            raise ConfigError(f"--{name.replace('_', '-')} {want} does not match weights file ({weights.config})")
    return weights


arch_options = [
    click.option("--depth", type=int, default=None, help="Expected network depth (checked against the weights file)."),
    click.option("--width", type=int, default=None, help="Expected layer width."),
    click.option("--n-iter", type=int, default=None, help="Expected number of curve iterations."),
]


def with_arch(f):
    for opt in reversed(arch_options):
        f = opt(f)
    return f


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def cli(verbose):
    """Low-light image enhancement by per-pixel curve estimation, trained without reference images."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON file mirroring TrainConfig.")
@click.option("--data-dir", type=click.Path(file_okay=False))
@click.option("--image-size", type=int)
@click.option("--batch-size", type=int)
@click.option("--max-steps", type=int)
@click.option("--seed", type=int)
@click.option("--checkpoint-every", type=int)
@click.option("--val-fraction", type=float)
@click.option("--synthetic", type=int, help="Train on N generated gamma-degraded scenes instead of --data-dir.")
@click.option("--lr", type=float, help="Adam learning rate.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Checkpoint directory.")
def train_cmd(config_path, out_dir, lr, **overrides):
    """Train the curve estimator; logs step, l_spa, l_exp, l_col, l_tv, total per line."""
    raw = TrainConfig.from_json(config_path).to_dict() if config_path else {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if out_dir is not None:
        raw["out_dir"] = out_dir
    if lr is not None:
        raw.setdefault("optimizer", {})["lr"] = lr
    cfg = TrainConfig.from_dict(raw)
    click.echo("step\tl_spa\tl_exp\tl_col\tl_tv\ttotal")
    ckpt = train(cfg, log_file=sys.stdout)
    if cfg.out_dir:
        click.echo(f"final checkpoint: {Path(cfg.out_dir) / 'final'}.zdce", err=True)
    else:
        click.echo(f"finished {ckpt.step} steps (no --out given, nothing saved)", err=True)


@cli.command("enhance")
@click.option("--weights", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--reference", type=click.Path(), help="Reference image, or directory of same-named references, for PSNR/MAE.")
@click.option("--jobs", type=int, default=4, show_default=True)
@with_arch
@click.argument("images", nargs=-1, required=True, type=click.Path(dir_okay=False))
def enhance_cmd(weights, out_dir, reference, jobs, depth, width, n_iter, images):
    """Enhance IMAGES and write PNGs into --out.

    Prints: input, output, seconds, psnr_db, mae_8bit (MAE in 8-bit levels).
    """
    w = _load(weights, depth, width, n_iter)
    out_dir = Path(out_dir)

    def one(path):
        ref = _reference_for(reference, path)
        return enhance(w, path, out_dir / (Path(path).stem + ".png"), ref)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        reports = list(pool.map(one, images))
    for r in reports:
        fields = [r.input_path, r.output_path, f"{r.seconds:.4f}"]
        if r.psnr is not None:
            fields += [f"{r.psnr:.4f}", f"{r.mae:.4f}"]
        click.echo("\t".join(fields))


def _reference_for(reference, path):
    if reference is None:
        return None
    ref = Path(reference)
    return ref / Path(path).name if ref.is_dir() else ref


@cli.command("heatmaps")
@click.option("--weights", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@with_arch
@click.argument("image", type=click.Path(dir_okay=False))
def heatmaps_cmd(weights, out_dir, depth, width, n_iter, image):
    """Write per-channel heatmaps of the iteration-averaged curve parameter maps."""
    w = _load(weights, depth, width, n_iter)
    for p in export_heatmaps(w, image, out_dir):
        click.echo(str(p))


@cli.command("metrics")
@click.option("--reference", required=True, type=click.Path(), help="Reference image or directory of same-named references.")
@click.argument("images", nargs=-1, required=True, type=click.Path(dir_okay=False))
def metrics_cmd(reference, images):
    """Print path, psnr_db, mae_8bit (tab-separated) for each image against its reference."""
    for path in images:
        a = read_image(path)
        b = read_image(_reference_for(reference, path))
        click.echo(f"{path}\t{psnr(a, b):.4f}\t{mae(a, b):.4f}")


@cli.command("bench")
@click.option("--weights", type=click.Path(dir_okay=False), help="Defaults to freshly initialised 7-32-8 weights.")
@click.option("--width", "img_width", type=int, default=640, show_default=True)
@click.option("--height", "img_height", type=int, default=480, show_default=True)
@click.option("--repeats", type=int, default=5, show_default=True)
def bench_cmd(weights, img_width, img_height, repeats):
    """Single-threaded latency of network + curve application."""
    w = modelio.load_weights(weights) if weights else init_weights(ArchConfig(), seed=0)
    if repeats < 3:
        raise click.UsageError("--repeats must be >= 3")
    res = benchmark(w, img_width, img_height, repeats)
    click.echo(f"size\t{img_width}x{img_height}")
    click.echo(f"samples\t{len(res.samples)}")
    click.echo(f"min_s\t{res.min:.4f}\nmedian_s\t{res.median:.4f}\nmean_s\t{res.mean:.4f}")


@cli.command("gradcheck")
@click.option("--float64", "use_f64", is_flag=True, help="Run the 64-bit build (step 1e-5, threshold 1e-4).")
@click.option("--seed", type=int, default=0, show_default=True)
def gradcheck_cmd(use_f64, seed):
    """Finite-difference check of every layer, the curve engine and all four losses."""
    results = run_gradcheck(np.float64 if use_f64 else np.float32, seed)
    for r in results:
        click.echo(f"{r.name}\t{r.error:.3e}\t{r.threshold:.0e}\t{'ok' if r.ok else 'FAIL'}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        raise SelfCheckFailed(f"gradient check failed for: {', '.join(failed)}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="zerodce", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, modelio.FormatError):
            click.echo(f"error: {exc}", err=True)
            return EXIT_FORMAT
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    except (OSError, ImageReadError, DatasetError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
