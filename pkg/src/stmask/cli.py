"""Command-line driver: generate -> masks -> run -> eval -> ablate.

Exit codes: 0 success, 1 internal error, 2 usage error, 3 validation
failure (malformed detections, inconsistent files, bad configs). All
randomness flows from explicit --seed flags; repeated invocations with
identical inputs produce byte-identical outputs. PKB_THREADS caps the
worker pool used for independent per-video work (output order always
follows input order).
"""

import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import formats, imc, metrics, pipeline
from .geometry import Canvas, LatentGrid
from .maskgen import AblationFlags, build_bundle, token_labels_from_prompt
from .pipeline import PipelineConfig, PromptSpec


def worker_count() -> int:
    env = os.environ.get("PKB_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise formats.ValidationError(f"PKB_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise formats.ValidationError("PKB_THREADS must be >= 1")
        return n
    return min(8, os.cpu_count() or 1)


def _parse_wh(value: str, what: str) -> tuple[int, int]:
    try:
        w, h = value.lower().split("x")
        w, h = int(w), int(h)
    except ValueError:
        raise click.BadParameter(f"{what} must look like WxH, got {value!r}")
    if w < 1 or h < 1:
        raise click.BadParameter(f"{what} dims must be positive")
    return w, h


class _ValidationExit(click.ClickException):
    exit_code = 3


def _run_guarded(fn):
    try:
        fn()
    except (formats.ValidationError, formats.FormatError) as e:
        raise _ValidationExit(str(e))


@click.group()
def main():
    """Box-trajectory masking toolkit: benchmark generation, attention-mask
    construction, a surrogate denoising loop, and control metrics."""


@main.command("gen-imc")
@click.option("--canvas", default="256x256", show_default=True, help="Canvas WxH in px.")
@click.option("--frames", default=24, show_default=True, type=int)
@click.option("--seed", default=imc.DEFAULT_SEED, show_default=True, type=int)
@click.option("--jitter", default=1, show_default=True, type=int, help="Center jitter in px.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_gen_imc(canvas, frames, seed, jitter, out):
    """Generate the 102-trajectory motion-control benchmark."""
    w, h = _parse_wh(canvas, "--canvas")

    def body():
        try:
            cv = Canvas(w, h, frames)
        except ValueError as e:
            raise formats.ValidationError(str(e))
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        n_prompts = len(imc.builtin_prompts())
        items = [(i, rep) for i in range(n_prompts) for rep in range(imc.REPS_PER_PROMPT)]

        def make(item):
            i, rep = item
            rec = imc.generate_record(seed, i, rep, cv, jitter_px=jitter)
            doc = formats.TrajectoryDoc(
                prompt=rec.entry.text, fg_phrase=rec.entry.subject, trajectory=rec.trajectory
            )
            return rec, formats.dumps_trajectory(doc)

        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            produced = list(pool.map(make, items))

        entries = []
        for rec, payload in produced:
            name = formats.dataset_file_name(rec.prompt_index, rec.rep)
            (out_dir / name).write_bytes(payload)
            entries.append((rec, formats.sha256_hex(payload)))
        manifest = formats.dumps_manifest(cv, seed, jitter, entries)
        (out_dir / "manifest.json").write_bytes(manifest)
        click.echo(f"wrote {len(entries)} trajectories + manifest to {out_dir}")

    _run_guarded(body)


@main.command("build-masks")
@click.option("--traj", "traj_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", required=True, help="Latent grid WxH.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--stem", default=None, help="Output stem; defaults to the trajectory file stem.")
@click.option("--no-cross-mask", is_flag=True, help="Disable the cross family (all-ones).")
@click.option("--no-spatial-mask", is_flag=True, help="Disable the spatial family.")
@click.option("--no-temporal-mask", is_flag=True, help="Disable the temporal family.")
def cmd_build_masks(traj_path, grid, out, stem, no_cross_mask, no_spatial_mask, no_temporal_mask):
    """Rasterize a trajectory and export its three mask families."""
    gw, gh = _parse_wh(grid, "--grid")

    def body():
        doc = formats.load_trajectory_file(traj_path)
        tokens = token_labels_from_prompt(doc.prompt, doc.fg_phrase)
        masks = pipeline.rasterize(doc.trajectory, LatentGrid(gw, gh))
        flags = AblationFlags(
            cross_on=not no_cross_mask,
            spatial_on=not no_spatial_mask,
            temporal_on=not no_temporal_mask,
        )
        bundle = build_bundle(masks, tokens, flags)
        base = stem or Path(traj_path).stem
        paths = formats.write_bundle(bundle, out, base)
        for name, path in paths.items():
            click.echo(f"{name}: {path}")
        if bundle.fully_masked_cross_rows:
            click.echo(
                f"note: {bundle.fully_masked_cross_rows} cross rows are fully "
                "masked and will use the attention fallback"
            )

    _run_guarded(body)


def _load_config(path) -> formats.ExperimentConfig:
    cfg = formats.ExperimentConfig.from_json(Path(path).read_text())
    if not Path(cfg.dataset_path).exists():
        raise formats.ValidationError(f"dataset path {cfg.dataset_path!r} does not exist")
    return cfg


def _run_once(cfg: formats.ExperimentConfig, ablation=None, reference_bundle=None):
    doc = formats.load_trajectory_file(cfg.dataset_path)
    prompt = PromptSpec.from_text(doc.prompt, doc.fg_phrase, seed=cfg.pipeline.seed)
    return pipeline.run(
        doc.trajectory,
        prompt,
        cfg.pipeline,
        cfg.grid,
        ablation if ablation is not None else cfg.ablation,
        reference_bundle=reference_bundle,
    )


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
def cmd_run(config_path):
    """Run the surrogate denoising loop for one experiment config."""

    def body():
        cfg = _load_config(config_path)
        video, report = _run_once(cfg)
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "latent.pkbl").write_bytes(formats.encode_latent(video))
        (out_dir / "run_report.json").write_bytes(formats.dumps_run_report(report))
        click.echo(
            f"{report.masked_steps} masked + {report.free_steps} free steps, "
            f"max masked leakage {report.max_masked_leakage():.3e}, "
            f"localization {report.localization:.4f}"
        )

    _run_guarded(body)


@main.command("eval")
@click.option("--gt", "gt_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option(
    "--detections",
    "detection_args",
    required=True,
    multiple=True,
    help="Detections file, optionally NAME=PATH; repeat per method.",
)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_eval(gt_dir, detection_args, out):
    """Score detections against ground-truth trajectories."""

    def body():
        gt_paths = sorted(p for p in Path(gt_dir).glob("*.json") if p.name != "manifest.json")
        if not gt_paths:
            raise formats.ValidationError(f"no trajectory files in {gt_dir}")
        gts = {p.stem: formats.load_trajectory_file(p).trajectory for p in gt_paths}
        canvases = {vid: t.canvas for vid, t in gts.items()}

        groups = {}
        for arg in detection_args:
            name, _, path = arg.rpartition("=")
            path = Path(path)
            if not name:
                name = path.stem
            if not path.exists():
                raise formats.ValidationError(f"detections file {path} does not exist")
            tracks = formats.detection_tracks(
                formats.parse_detections(path.read_text()), canvases
            )
            items = sorted(gts.items())
            with ThreadPoolExecutor(max_workers=worker_count()) as pool:
                records = list(
                    pool.map(
                        lambda kv: metrics.EvalRecord.evaluate(kv[0], kv[1], tracks[kv[0]]),
                        items,
                    )
                )
            groups[name] = records

        report = metrics.build_suite_report(groups)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        table = report.render_table()
        (out_dir / "report.txt").write_text(table)
        import json as _json

        (out_dir / "report.json").write_text(
            _json.dumps(report.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"
        )
        click.echo(table, nl=False)

    _run_guarded(body)


_ABLATION_VARIANTS = (
    ("full", AblationFlags(True, True, True)),
    ("no_cross", AblationFlags(False, True, True)),
    ("no_spatial", AblationFlags(True, False, True)),
    ("no_temporal", AblationFlags(True, True, False)),
)


@main.command("ablate")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_ablate(config_path, out):
    """Run the 4-variant mask ablation (full, -cross, -spatial, -temporal).

    All variants share the config's seed; leakage is measured against the
    full (unablated) masks, so a disabled family shows up as nonzero
    masked-step leakage while enabled families stay at zero."""

    def body():
        cfg = _load_config(config_path)
        if cfg.pipeline.frozen_steps < 1:
            raise formats.ValidationError("ablation needs frozen_steps >= 1")
        doc = formats.load_trajectory_file(cfg.dataset_path)
        prompt = PromptSpec.from_text(doc.prompt, doc.fg_phrase, seed=cfg.pipeline.seed)
        masks = pipeline.rasterize(doc.trajectory, cfg.grid)
        reference = build_bundle(masks, prompt.labels, AblationFlags(True, True, True))

        rows = []
        for name, flags in _ABLATION_VARIANTS:
            _, report = pipeline.run(
                doc.trajectory,
                prompt,
                cfg.pipeline,
                cfg.grid,
                flags,
                reference_bundle=reference,
            )
            rows.append(
                {
                    "variant": name,
                    "ablation": {
                        "cross_on": flags.cross_on,
                        "spatial_on": flags.spatial_on,
                        "temporal_on": flags.temporal_on,
                    },
                    "masked_leakage": report.masked_layer_leakage(),
                    "localization": report.localization,
                    "masked_steps": report.masked_steps,
                }
            )

        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        import json as _json

        (out_dir / "ablation.json").write_text(
            _json.dumps({"seed": cfg.pipeline.seed, "variants": rows}, sort_keys=True,
                        separators=(",", ":")) + "\n"
        )
        header = f"{'variant':<12} {'leak_spatial':>13} {'leak_cross':>13} {'leak_temporal':>14} {'localization':>13}"
        lines = [header, "-" * len(header)]
        for row in rows:
            leak = row["masked_leakage"]
            lines.append(
                f"{row['variant']:<12} {leak.get('spatial', 0.0):>13.3e} "
                f"{leak.get('cross', 0.0):>13.3e} {leak.get('temporal', 0.0):>14.3e} "
                f"{row['localization']:>13.4f}"
            )
        table = "\n".join(lines) + "\n"
        (out_dir / "ablation.txt").write_text(table)
        click.echo(table, nl=False)

    _run_guarded(body)


if __name__ == "__main__":
    sys.exit(main())
