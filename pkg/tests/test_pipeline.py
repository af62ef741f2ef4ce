import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from cheff.cli import main
from cheff.config import PipelineConfig
from cheff.datapipe.images import from_model_range, load_image, read_pgm, write_pgm
from cheff.diffusion.conditioning import NO_CONDITIONING
from cheff.errors import CheckpointKindError, ConfigError, DataError, NumericError, ShapeError
from cheff.networks.autoencoder import Autoencoder
from cheff.networks.checkpoint import ModelKind, read_checkpoint
from cheff.numeric import ops
from cheff.numeric.io import load_tensor
from cheff.numeric.optim import ParamSet
from cheff.numeric.random import RngState
from cheff.pipeline.cascade import CascadeModels, load_cascade, sample_cascade, sample_one, sr_checkpoint_path
from cheff.pipeline.data import batches, load_image_set, resize_batch
from cheff.pipeline.diagnose import diagnose_schedule_cmd
from cheff.pipeline.manifest import RunManifest, content_hash
from cheff.pipeline.models import load_autoencoder, load_diffusion
from cheff.pipeline.progress import TerminalProgress
from cheff.pipeline.stages import run_training_stage
from cheff.pipeline.training import fit, stage_rng, train_ae
from cheff.pipeline.workflows import (
    ReconstructionModels,
    Workflow,
    autoencode,
    inpaint_cmd,
    nearest_downsample,
    reconstruct,
)
from fakes import IdentityAutoencoder


TINY_CONFIG = """\
seed = 7

[geometry]
lr_size = 16
hr_size = 32

[paths]
index = "data/index.json"
ae = "{ae}"
sdm = "{sdm}"
sr = "checkpoints/sr.chkp"
sr_finetuned = "{sr_finetuned}"
text = "{text}"

[autoencoder]
latent_channels = 2
channel_schedule = [4, 8]

[autoencoder.training]
steps = {ae_steps}
batch_size = 2

[sdm]
conditioning = "{conditioning}"

[sdm.unet]
base_filters = 4
multipliers = [1, 2]
attention_resolutions = [4]
time_embed_dim = 8

[sdm.schedule]
beta_start = 1e-3
beta_end = 0.2
timesteps = 20

[sdm.training]
steps = 2
batch_size = 2

[sr.unet]
base_filters = 4
multipliers = [1, 2]
attention_resolutions = []
time_embed_dim = 8

[sr.schedule]
kind = "cosine"
timesteps = 20

[sr.training]
steps = 2
batch_size = 2

[sr.finetune]
steps = {finetune_steps}
batch_size = 2

[text]
embed_dim = 4
depth = 1
heads = 2
mlp_ratio = 2
train_jointly = {train_jointly}

[sampler]
steps = 4
"""


def _write_config(root, name="cheff.toml", **overrides):
    values = {
        "ae": "checkpoints/ae.chkp",
        "sdm": "checkpoints/sdm.chkp",
        "text": "checkpoints/text.chkp",
        "sr_finetuned": "checkpoints/sr_finetuned.chkp",
        "finetune_steps": 2,
        "ae_steps": 2,
        "conditioning": "none",
        "train_jointly": "true",
    }
    values.update(overrides)
    path = Path(root) / "config" / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(TINY_CONFIG.format(**values), encoding="utf-8")
    return path


@dataclass
class Desk:
    root: Path
    config_path: Path
    config: PipelineConfig
    results: dict


@pytest.fixture(scope="module")
def desk(tmp_path_factory, make_corpus):
    root = tmp_path_factory.mktemp("desk")
    make_corpus(root, 4, seed=1)
    config_path = _write_config(root)
    config = PipelineConfig.from_file(config_path)
    results = {
        command: run_training_stage(config, command)
        for command in ("train-ae", "train-sr", "finetune-sr", "train-sdm")
    }
    return Desk(root, config_path, config, results)


def _image_path(desk, index=0):
    return desk.root / "data" / "images" / "synthetic" / f"img_{index:04d}.pgm"


def _quantized(image):
    return np.rint(from_model_range(image) * 255) / 255


def test_training_stages_write_checkpoints_curves_and_manifests(desk):
    paths = desk.config.paths
    for command, field, kind in [
        ("train-ae", "ae", ModelKind.AE),
        ("train-sr", "sr", ModelKind.SR),
        ("finetune-sr", "sr_finetuned", ModelKind.SR),
        ("train-sdm", "sdm", ModelKind.SDM),
    ]:
        result = desk.results[command]
        assert len(result.losses) == 2
        assert all(np.isfinite(result.losses))
        checkpoint = read_checkpoint(getattr(paths, field), kind)
        assert checkpoint.params.equals(result.checkpoint.params)
        manifest = json.loads((desk.root / "runs" / command / "manifest.json").read_text())
        assert manifest["command"] == command
        assert manifest["seed"] == 7
        assert manifest["checkpoints"][field] == content_hash(getattr(paths, field))
        assert manifest["parameters"]["steps"] == 2
        assert manifest["parameters"]["images"] == 4
        curve = Path(getattr(paths, field)).parent / manifest["parameters"]["loss_curve"]
        assert json.loads(curve.read_text()) == result.losses


def test_finetune_starts_from_the_base_sr_checkpoint(desk):
    manifest = json.loads((desk.root / "runs" / "finetune-sr" / "manifest.json").read_text())
    assert set(manifest["checkpoints"]) == {"ae", "sr", "sr_finetuned"}
    base = load_diffusion(desk.config.paths.sr, ModelKind.SR)
    tuned = load_diffusion(desk.config.paths.sr_finetuned, ModelKind.SR)
    assert base.denoiser.cfg == tuned.denoiser.cfg
    assert not base.denoiser.params.equals(tuned.denoiser.params)


def test_training_is_reproducible_per_seed(desk):
    data = load_image_set(desk.config.paths.index, desk.config.geometry.lr_size)
    again = train_ae(desk.config, data)
    assert again.checkpoint.params.equals(load_autoencoder(desk.config.paths.ae).params)


def test_zero_training_steps_return_the_initialization(desk, tmp_path):
    config = PipelineConfig.from_file(_write_config(desk.root, "zero.toml", ae="checkpoints/zero/ae.chkp", ae_steps=0))
    result = run_training_stage(config, "train-ae", out_dir=tmp_path)
    assert result.losses == []
    initial = Autoencoder.create(config.autoencoder.architecture(), stage_rng(config, "ae").fork(2))
    assert result.checkpoint.params.equals(initial.params)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["parameters"]["final_loss"] is None


def test_zero_step_finetune_keeps_the_base_sr(desk, tmp_path):
    config = PipelineConfig.from_file(
        _write_config(desk.root, "nofinetune.toml", sr_finetuned="checkpoints/nofinetune/sr.chkp", finetune_steps=0)
    )
    result = run_training_stage(config, "finetune-sr", out_dir=tmp_path)
    assert result.losses == []
    assert result.checkpoint.params.equals(load_diffusion(config.paths.sr, ModelKind.SR).denoiser.params)


def test_report_conditioned_sdm_trains_a_text_encoder_jointly(desk, tmp_path):
    config = PipelineConfig.from_file(
        _write_config(desk.root, "text.toml", sdm="checkpoints/text/sdm.chkp", text="checkpoints/text/text.chkp", conditioning="report")
    )
    result = run_training_stage(config, "train-sdm", out_dir=tmp_path / "train")
    assert result.text is not None
    text = read_checkpoint(config.paths.text, ModelKind.TXT)
    assert text.config["source"] == "report"
    assert "bright" in text.config["vocab"]["tokens"]
    assert load_diffusion(config.paths.sdm, ModelKind.SDM).conditioning == "report"

    images, _ = sample_cascade(config, 1, "A bright ellipse.", out_dir=tmp_path / "prompted")
    assert read_pgm(images[0]).shape == (32, 32)
    images, _ = sample_cascade(config, 1, out_dir=tmp_path / "empty-prompt")
    assert len(images) == 1


def test_conditioned_sdm_without_text_encoder_is_an_error(desk, tmp_path):
    config = PipelineConfig.from_file(
        _write_config(
            desk.root,
            "frozen.toml",
            sdm="checkpoints/frozen/sdm.chkp",
            text="checkpoints/absent.chkp",
            conditioning="labels",
            train_jointly="false",
        )
    )
    with pytest.raises(DataError):
        run_training_stage(config, "train-sdm", out_dir=tmp_path)


def test_training_stage_needs_its_upstream_checkpoint(desk, tmp_path):
    config = PipelineConfig.from_file(_write_config(desk.root, "noae.toml", ae="checkpoints/missing_ae.chkp"))
    with pytest.raises(DataError):
        run_training_stage(config, "train-sdm", out_dir=tmp_path)
    with pytest.raises(ConfigError):
        run_training_stage(config, "train-everything", out_dir=tmp_path)


def test_fit_stops_on_non_finite_loss():
    params = ParamSet({"w": np.ones(2)})
    settings = PipelineConfig().autoencoder.training.model_copy(update={"steps": 3})
    with pytest.raises(NumericError) as info:
        fit({"p": params}, lambda index, rng: ops.mul(ops.sum(params["w"]), float("nan")), 4, settings, RngState(seed=0), label="nan")
    assert info.value.exit_code == 5


def test_batches_cover_each_epoch():
    stream = batches(RngState(seed=3), 5, 2)
    epoch = np.concatenate([next(stream), next(stream)])
    assert len(set(epoch.tolist())) == 4
    assert len(next(stream)) == 2
    with pytest.raises(DataError):
        next(batches(RngState(seed=3), 0, 2))


def test_cascade_is_bit_identical_per_seed(desk, tmp_path):
    first, first_manifest = sample_cascade(desk.config, 2, out_dir=tmp_path / "a", keep_intermediate=True)
    second, second_manifest = sample_cascade(desk.config, 2, out_dir=tmp_path / "b", workers=2)
    assert [path.name for path in first] == ["x_hr_0000.pgm", "x_hr_0001.pgm"]
    for one, two in zip(first, second):
        assert one.read_bytes() == two.read_bytes()
        assert read_pgm(one).shape == (32, 32)
    assert read_pgm(tmp_path / "a" / "x_lr_0000.pgm").shape == (16, 16)
    assert load_tensor(tmp_path / "a" / "z_0001.ctnsr").shape == (2, 8, 8)

    manifest = json.loads(first_manifest.read_text())
    assert manifest["outputs"] == sorted(
        ["x_hr_0000.pgm", "x_hr_0001.pgm", "x_lr_0000.pgm", "x_lr_0001.pgm", "z_0000.ctnsr", "z_0001.ctnsr"]
    )
    assert manifest["checkpoints"]["sr"] == content_hash(desk.config.paths.sr_finetuned)
    assert set(manifest["stage_seconds"]) == {"load", "sample", "write"}
    second_view = json.loads(second_manifest.read_text())
    for key in ("checkpoints", "config", "seed"):
        assert manifest[key] == second_view[key]


def test_cascade_seed_changes_the_images(desk, tmp_path):
    base, _ = sample_cascade(desk.config, 1, out_dir=tmp_path / "a")
    other, _ = sample_cascade(desk.config.with_overrides(seed=8), 1, out_dir=tmp_path / "b")
    assert base[0].read_bytes() != other[0].read_bytes()


def test_cascade_prefers_the_finetuned_sr(desk, tmp_path):
    assert sr_checkpoint_path(desk.config) == Path(desk.config.paths.sr_finetuned)
    models = load_cascade(desk.config)
    assert models.text is None
    with pytest.raises(ConfigError):
        sample_cascade(desk.config, 1, "a prompt", out_dir=tmp_path, models=models)
    with pytest.raises(ConfigError):
        sample_cascade(desk.config, 0, out_dir=tmp_path, models=models)


@pytest.mark.parametrize("workflow", ["1a", "1b", "2", "3a", "3b"])
def test_reconstruction_workflows_report_per_image_and_mean(desk, tmp_path, workflow):
    data = load_image_set(desk.config.paths.index, desk.config.geometry.hr_size)
    report = reconstruct(desk.config, data, workflow, out_dir=tmp_path)
    assert report["workflow"] == workflow
    assert report["scope"] == ("x_lr" if workflow == "2" else "x_hr")
    assert report["mean"]["count"] == 4
    assert len(report["per_image"]) == 4
    assert report["per_image"][0]["path"] == "images/synthetic/img_0000.pgm"
    assert report["mean"]["mse"] == pytest.approx(np.mean([row["mse"] for row in report["per_image"]]))
    written = json.loads((tmp_path / f"report_{workflow}.json").read_text())
    assert written == report
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["outputs"] == [f"report_{workflow}.json"]
    assert ("ae" in manifest["checkpoints"]) == Workflow(workflow).uses_autoencoder


def test_reconstruction_is_deterministic(desk, tmp_path):
    data = load_image_set(desk.config.paths.index, desk.config.geometry.hr_size)
    first = reconstruct(desk.config, data, "3a", out_dir=tmp_path / "a")
    second = reconstruct(desk.config, data, Workflow.sr_base, out_dir=tmp_path / "b")
    assert first == second


def test_lossless_autoencoder_reports_infinite_psnr_as_null(desk, tmp_path):
    data = load_image_set(desk.config.paths.index, desk.config.geometry.hr_size)
    report = reconstruct(desk.config, data, "2", models=ReconstructionModels(ae=IdentityAutoencoder()), out_dir=tmp_path)
    assert report["mean"]["mse"] == 0.0
    assert report["mean"]["psnr_db"] is None
    assert report["mean"]["psnr_infinite"] == 4
    assert report["mean"]["ssim"] == pytest.approx(1.0)
    written = json.loads((tmp_path / "report_2.json").read_text())
    assert all(row["psnr_db"] is None for row in written["per_image"])


def _mask(tmp_path, size=32, box=None):
    mask = np.zeros((size, size))
    if box is not None:
        top, left, extent = box
        mask[top : top + extent, left : left + extent] = 1.0
    return write_pgm(tmp_path / "mask.pgm", mask)


def test_pixel_inpaint_with_empty_mask_returns_the_image(desk, tmp_path):
    image = _image_path(desk)
    outputs = inpaint_cmd(desk.config, image, _mask(tmp_path), "pixel", out_dir=tmp_path / "run")
    assert [path.name for path in outputs] == ["inpaint_0000.pgm"]
    assert outputs[0].read_bytes() == image.read_bytes()


def test_pixel_inpaint_keeps_unmasked_pixels(desk, tmp_path):
    image = _image_path(desk, 1)
    outputs = inpaint_cmd(desk.config, image, _mask(tmp_path, box=(8, 8, 12)), "pixel", variants=2, out_dir=tmp_path / "run")
    assert len(outputs) == 2
    original = read_pgm(image)
    keep = read_pgm(tmp_path / "mask.pgm") == 0.0
    for path in outputs:
        assert np.array_equal(read_pgm(path)[keep], original[keep])
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["parameters"]["variants"] == 2
    assert manifest["outputs"] == ["inpaint_0000.pgm", "inpaint_0001.pgm"]


def test_pixel_inpaint_with_full_mask_is_a_cascade_sample(desk, tmp_path):
    outputs = inpaint_cmd(desk.config, _image_path(desk, 2), _mask(tmp_path, box=(0, 0, 32)), "pixel", out_dir=tmp_path / "run")
    paths = desk.config.paths
    models = CascadeModels(
        ae=load_autoencoder(paths.ae),
        sdm=load_diffusion(paths.sdm, ModelKind.SDM),
        sr=load_diffusion(paths.sr, ModelKind.SR),
    )
    expected = sample_one(models, desk.config, RngState(seed=desk.config.seed).fork(0), NO_CONDITIONING)
    assert np.allclose(read_pgm(outputs[0]), _quantized(expected.x_hr[0]))


def test_pixel_inpaint_output_ignores_masked_pixels(desk, tmp_path):
    first, second = _image_path(desk, 0), _image_path(desk, 3)
    assert first.read_bytes() != second.read_bytes()
    mask = _mask(tmp_path, box=(0, 0, 32))
    one = inpaint_cmd(desk.config, first, mask, "pixel", out_dir=tmp_path / "one")
    two = inpaint_cmd(desk.config, second, mask, "pixel", out_dir=tmp_path / "two")
    assert one[0].read_bytes() == two[0].read_bytes()


def test_pixel_inpaint_partial_mask_ignores_content_under_the_mask(desk, tmp_path):
    original = read_pgm(_image_path(desk, 1))
    edited = original.copy()
    edited[8:20, 8:20] = 1.0 - edited[8:20, 8:20]
    write_pgm(tmp_path / "edited.pgm", edited)
    mask = _mask(tmp_path, box=(8, 8, 12))
    one = inpaint_cmd(desk.config, _image_path(desk, 1), mask, "pixel", out_dir=tmp_path / "one")
    two = inpaint_cmd(desk.config, tmp_path / "edited.pgm", mask, "pixel", out_dir=tmp_path / "two")
    assert one[0].read_bytes() == two[0].read_bytes()


def test_latent_inpaint_with_empty_mask_is_the_autoencoder_reconstruction(desk, tmp_path):
    image = _image_path(desk, 2)
    outputs = inpaint_cmd(desk.config, image, _mask(tmp_path), "latent", out_dir=tmp_path / "run")
    assert read_pgm(outputs[0]).shape == (32, 32)
    x_lr = resize_batch(load_image(image, 32)[None], 16)
    expected = autoencode(load_autoencoder(desk.config.paths.ae), x_lr)[0, 0]
    assert np.allclose(read_pgm(tmp_path / "run" / "inpaint_lr_0000.pgm"), _quantized(expected))


def test_inpaint_rejects_bad_masks(desk, tmp_path):
    image = _image_path(desk)
    with pytest.raises(ShapeError):
        inpaint_cmd(desk.config, image, _mask(tmp_path, size=16), "pixel", out_dir=tmp_path)
    write_pgm(tmp_path / "gray.pgm", np.full((32, 32), 0.5))
    with pytest.raises(ShapeError):
        inpaint_cmd(desk.config, image, tmp_path / "gray.pgm", "pixel", out_dir=tmp_path)
    with pytest.raises(ConfigError):
        inpaint_cmd(desk.config, image, _mask(tmp_path), "pixel", variants=0, out_dir=tmp_path)


def test_nearest_downsample_samples_pixel_centers():
    mask = np.zeros((1, 8, 8))
    mask[0, :4, :4] = 1.0
    small = nearest_downsample(mask, 2)
    assert small.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]


def test_diagnose_schedule_flags_the_shallow_beta_end():
    defaults = PipelineConfig()
    deep = dict(diagnose_schedule_cmd(defaults).fields)
    assert deep["sufficient"] == "true"
    shallow_schedule = defaults.sdm.schedule.model_copy(update={"beta_end": 0.0195})
    shallow = defaults.model_copy(update={"sdm": defaults.sdm.model_copy(update={"schedule": shallow_schedule})})
    assert dict(diagnose_schedule_cmd(shallow).fields)["sufficient"] == "false"


def test_diagnose_schedule_decodes_terminal_residual(desk, tmp_path):
    diagnosis = diagnose_schedule_cmd(desk.config, image=_image_path(desk), out_dir=tmp_path)
    assert [path.name for path in diagnosis.residual_outputs] == ["residual_t0.pgm", "residual_tT.pgm"]
    assert read_pgm(tmp_path / "residual_tT.pgm").shape == (16, 16)
    assert diagnosis.render().splitlines()[-1] == "residual_outputs=residual_t0.pgm,residual_tT.pgm"


def test_loading_a_checkpoint_of_the_wrong_kind(desk):
    with pytest.raises(CheckpointKindError):
        load_diffusion(desk.config.paths.ae, ModelKind.SR)


def test_manifest_outputs_are_relative_and_sorted(tmp_path):
    manifest = RunManifest(command="check", seed=1, config={})
    (tmp_path / "b.txt").write_text("b")
    (tmp_path / "a.txt").write_text("a")
    manifest.add_output(tmp_path / "b.txt", tmp_path)
    manifest.add_output(tmp_path / "a.txt", tmp_path)
    with manifest.stage("work"):
        pass
    path = manifest.write(tmp_path)
    written = json.loads(path.read_text())
    assert written["outputs"] == ["a.txt", "b.txt"]
    assert "work" in written["stage_seconds"]
    assert "stage_seconds" not in manifest.deterministic_view()
    assert content_hash(tmp_path / "a.txt").startswith("sha256:")
    with pytest.raises(DataError):
        content_hash(tmp_path / "missing.txt")


def test_terminal_progress_lines():
    stream = io.StringIO()
    progress = TerminalProgress(enabled=True, stream=stream)
    report = progress.steps("sdm")
    report(1, 2)
    report(2, 2)
    progress.info("done")
    assert stream.getvalue() == "\rsdm 1/2\rsdm 2/2\ndone\n"
    silent = io.StringIO()
    TerminalProgress(stream=silent).steps("x")(1, 1)
    assert silent.getvalue() == ""


def _last_error_line(capsys):
    return capsys.readouterr().err.strip().splitlines()[-1]


def test_cli_reconstruct_prints_the_mean(desk, tmp_path, capsys):
    code = main(["reconstruct", "--config", str(desk.config_path), "--workflow", "2", "--out", str(tmp_path)])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[:3] == ["workflow=2", "scope=x_lr", "count=4"]
    assert (tmp_path / "reconstruct" / "report_2.json").is_file()


def test_cli_sample_writes_into_the_out_directory(desk, tmp_path, capsys):
    code = main(["sample", "--config", str(desk.config_path), "-n", "1", "--out", str(tmp_path), "--seed", "3"])
    assert code == 0
    printed = capsys.readouterr().out.splitlines()
    assert printed == [str(tmp_path / "sample" / "x_hr_0000.pgm"), str(tmp_path / "sample" / "manifest.json")]
    assert json.loads((tmp_path / "sample" / "manifest.json").read_text())["seed"] == 3


def test_cli_prompt_for_unconditional_sdm_is_a_config_error(desk, tmp_path, capsys):
    code = main(["sample", "--config", str(desk.config_path), "--prompt", "ellipse", "--out", str(tmp_path)])
    assert code == 2
    assert _last_error_line(capsys).startswith("error: config: A prompt was given")


def test_cli_missing_checkpoint_is_an_io_error(tmp_path, capsys):
    config_path = _write_config(tmp_path)
    write_pgm(tmp_path / "image.pgm", np.zeros((32, 32)))
    write_pgm(tmp_path / "mask.pgm", np.zeros((32, 32)))
    code = main(["inpaint", str(tmp_path / "image.pgm"), str(tmp_path / "mask.pgm"), "--config", str(config_path)])
    assert code == 3
    assert _last_error_line(capsys).startswith("error: io: SR checkpoint not found")


def test_cli_corrupt_checkpoint_exit_code(tmp_path, capsys):
    config_path = _write_config(tmp_path)
    (tmp_path / "checkpoints").mkdir()
    (tmp_path / "checkpoints" / "ae.chkp").write_bytes(b"not a checkpoint")
    write_pgm(tmp_path / "image.pgm", np.zeros((32, 32)))
    code = main(["diagnose-schedule", "--config", str(config_path), "--image", str(tmp_path / "image.pgm")])
    assert code == 4
    assert _last_error_line(capsys).startswith("error: checkpoint-magic: ")


def test_cli_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "bad.toml").write_text("[sampler]\nwarp = 1\n")
    assert main(["diagnose-schedule", "--config", str(tmp_path / "bad.toml")]) == 2
    assert _last_error_line(capsys).startswith("error: config: ")


@pytest.mark.parametrize(
    "argv, prefix",
    [
        ([], "error: config: cheffctl: the following arguments are required: command"),
        (["sample", "-n", "many"], "error: config: cheffctl sample: argument -n/--count: invalid int value"),
        (["warp-drive"], "error: config: cheffctl: argument command: invalid choice"),
    ],
)
def test_cli_usage_errors_are_config_errors(argv, prefix, capsys):
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert len(err.strip().splitlines()) == 1
    assert err.startswith(prefix)


def test_cli_unexpected_failures_print_one_line(monkeypatch, capsys):
    import cheff.cli

    def fail(args):
        raise RuntimeError("worker\ncrashed")

    monkeypatch.setattr(cheff.cli, "run", fail)
    assert main(["diagnose-schedule"]) == 1
    assert capsys.readouterr().err == "error: internal: RuntimeError: worker crashed\n"

    def deny(args):
        raise PermissionError("runs directory is read-only")

    monkeypatch.setattr(cheff.cli, "run", deny)
    assert main(["diagnose-schedule"]) == 3
    assert capsys.readouterr().err == "error: io: runs directory is read-only\n"


def test_cli_diagnose_schedule_with_beta_end_override(shipped_config_path, capsys):
    config = str(shipped_config_path)
    assert main(["diagnose-schedule", "--config", config, "--beta-end", "0.0195"]) == 0
    fields = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert float(fields["beta_end"]) == pytest.approx(0.0195)
    assert fields["sufficient"] == "false"
    assert main(["diagnose-schedule", "--config", config]) == 0
    assert "sufficient=true" in capsys.readouterr().out


def test_cli_corpus_index_and_metrics(tmp_path, capsys):
    assert main(["synth-corpus", str(tmp_path / "corpus"), "--source", "one=3", "--size", "16", "--seed", "2"]) == 0
    assert capsys.readouterr().out.strip() == "one=3"
    index = tmp_path / "index.json"
    assert main(["build-index", "--source", f"one={tmp_path / 'corpus' / 'one'}", "--output", str(index)]) == 0
    assert "one=3" in capsys.readouterr().out
    assert json.loads(index.read_text())["counts"] == {"one": 3}

    folder = tmp_path / "corpus" / "one"
    assert main(["metrics", "pairwise", str(folder), str(folder)]) == 0
    pairs = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
    assert pairs["count"] == "3" and pairs["mse"] == "0.0"
    assert main(["metrics", "distribution", str(folder), str(folder)]) == 0
    distribution = [line.split("=", 1)[0] for line in capsys.readouterr().out.splitlines()]
    assert distribution == ["count_a", "count_b", "frechet", "mmd2"]

    assert main(["synth-corpus", str(tmp_path / "bad"), "--source", "one=many"]) == 2
    assert _last_error_line(capsys).startswith("error: config: ")
    assert main(["build-index", "--config", str(tmp_path / "none.toml")]) == 2
