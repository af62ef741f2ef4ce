from pathlib import Path

import pytest

from cheff.config import PipelineConfig
from cheff.diffusion.samplers import SamplerKind
from cheff.errors import ConfigError
from cheff.schedules import ScheduleKind


def _write(tmp_path, text):
    (tmp_path / "config").mkdir(exist_ok=True)
    path = tmp_path / "config" / "cheff.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_shipped_config_defaults(shipped_config_path):
    config = PipelineConfig.from_file(shipped_config_path)
    assert config.geometry.lr_size == 32 and config.geometry.hr_size == 128
    assert config.sdm.schedule.kind == ScheduleKind.linear
    assert config.sdm.schedule.beta_end == 0.0295
    assert config.sdm.schedule.timesteps == 1000
    assert config.sr.schedule.kind == ScheduleKind.cosine
    assert config.sr.schedule.timesteps == 2000
    assert config.sampler.kind == SamplerKind.ddim
    assert config.sampler.steps == 150 and config.sampler.eta == 0.0
    assert config.diagnostic.threshold == 1e-5
    assert config.latent_size == 8
    assert Path(config.paths.ae) == shipped_config_path.parents[1] / "checkpoints" / "ae.chkp"


def test_shipped_config_matches_model_defaults(shipped_config_path):
    shipped = PipelineConfig.from_file(shipped_config_path)
    assert shipped.model_dump(exclude={"paths"}) == PipelineConfig().model_dump(exclude={"paths"})


def test_paths_resolve_against_the_config_parent(tmp_path):
    config = PipelineConfig.from_file(_write(tmp_path, '[paths]\nae = "models/ae.chkp"\n'))
    assert Path(config.paths.ae) == (tmp_path / "models" / "ae.chkp").resolve()
    assert Path(config.paths.runs_dir) == (tmp_path / "runs").resolve()


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("[sampler]\nsteps = 10\nwarp = 2\n", "sampler.warp"),
        ("[geometry]\nlr_size = 32\nhr_size = 100\n", "divisible"),
        ("[sdm.schedule]\ntimesteps = 0\n", "sdm.schedule.timesteps"),
        ("[sampler]\neta = 2.0\n", "sampler.eta"),
        ("[autoencoder]\nchannel_schedule = [8, 8, 8, 8, 8, 8, 8]\n", "autoencoder factor"),
        ("seed = -1\n", "seed"),
        ("[sdm]\nconditioning = \"pictures\"\n", "sdm.conditioning"),
    ],
)
def test_invalid_configs_name_the_offending_field(tmp_path, text, fragment):
    with pytest.raises(ConfigError) as info:
        PipelineConfig.from_file(_write(tmp_path, text))
    assert fragment in info.value.detail
    assert info.value.exit_code == 2


def test_unreadable_configs(tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(tmp_path / "missing.toml")
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(_write(tmp_path, "seed = [\n"))


def test_overrides(tmp_path):
    config = PipelineConfig().with_overrides(seed=42, runs_dir=tmp_path / "out")
    assert config.seed == 42
    assert config.paths.runs_dir == str((tmp_path / "out").resolve())
    assert PipelineConfig().with_overrides().seed == 0
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides(seed=2**64)


def test_echo_leaves_out_the_runs_dir(tmp_path):
    first = PipelineConfig().with_overrides(runs_dir=tmp_path / "a").echo()
    second = PipelineConfig().with_overrides(runs_dir=tmp_path / "b").echo()
    assert first == second
    assert "runs_dir" not in first["paths"]


def test_derived_network_configs():
    config = PipelineConfig()
    plain = config.sdm_unet(conditioned=False)
    assert plain.cross_attn is None
    assert plain.image_size == 8 and plain.in_channels == 3
    conditioned = config.sdm_unet(conditioned=True)
    assert conditioned.cross_attn.d_tau == config.text.embed_dim
    sr = config.sr_unet()
    assert sr.image_size == 128 and sr.cond_channels == 1
    assert config.sr_schedule().timesteps == 2000
    assert config.text.encoder_config(vocab_size=12).vocab_size == 12


def test_sampler_build_caps_steps_at_t():
    config = PipelineConfig.validated({"sampler": {"steps": 5000}})
    sampler = config.sampler.build(config.sdm_schedule())
    assert len(sampler.plan.subsequence) == 1000
    ddpm = PipelineConfig.validated({"sampler": {"kind": "ddpm"}}).sampler.build(config.sdm_schedule())
    assert ddpm.kind == SamplerKind.ddpm
