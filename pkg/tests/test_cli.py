import os

import pytest

from scenevq.cli import main
from scenevq.config import load_config

TINY_CONFIG = """
# tiny end-to-end exercise config
n_points = 32
codes_per_class = 4
code_dim = 40
encoder_hidden = 8,16
decoder_hidden = 16
vae_batch = 8
vae_steps = 120
max_objects = 6
flow_hidden = 24
time_dim = 8
flow_batch = 8
flow_steps = 120
sample_steps = 8
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.cfg"
    cfg_path.write_text(TINY_CONFIG)
    return root, str(cfg_path)


def test_config_parsing(workdir):
    _, cfg_path = workdir
    cfg = load_config(cfg_path)
    assert cfg.n_points == 32
    assert cfg.encoder_hidden == (8, 16)
    assert cfg.decoder_hidden == (16,)
    assert cfg.vae_steps == 120
    assert cfg.lambda_cd == 10.0  # default untouched


def test_config_rejects_unknown_key(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("does_not_exist = 3\n")
    with pytest.raises(ValueError, match="unknown config key"):
        load_config(bad)


def test_full_pipeline_via_cli(workdir, capsys):
    root, cfg_path = workdir
    data = str(root / "data")
    run = str(root / "run")

    assert main(["gen-data", "--out", data, "--scenes", "25", "--seed", "3",
                 "--config", cfg_path]) == 0
    assert os.path.exists(os.path.join(data, "train.json"))
    assert os.path.exists(os.path.join(data, "test.json"))

    assert main(["train-cpvqvae", "--data", data, "--out", run, "--seed", "0",
                 "--config", cfg_path, "--variant", "v4"]) == 0
    vae = os.path.join(run, "vae_v4.bundle")
    assert os.path.exists(vae)
    assert os.path.exists(os.path.join(run, "vae_v4_history.csv"))

    assert main(["train-lfmm", "--data", data, "--vae", vae, "--out", run,
                 "--seed", "0", "--config", cfg_path]) == 0
    lfmm = os.path.join(run, "lfmm.bundle")
    assert os.path.exists(lfmm)

    samples = str(root / "samples")
    assert main(["sample", "--vae", vae, "--lfmm", lfmm, "--out", samples,
                 "--scenes", "6", "--seed", "1", "--config", cfg_path]) == 0
    scene_dir = os.path.join(samples, "scenes")
    names = sorted(os.listdir(scene_dir))
    assert any(n.endswith(".json") for n in names)

    evaldir = str(root / "eval")
    assert main(["eval", "--data", data, "--vae", vae, "--generated", samples,
                 "--out", evaldir, "--config", cfg_path]) == 0
    assert os.path.exists(os.path.join(evaldir, "report.csv"))
    out = capsys.readouterr().out
    assert "class_consistency" in out


def test_eval_report_reproducible(workdir):
    root, cfg_path = workdir
    data = str(root / "data")
    run = str(root / "run")
    samples = str(root / "samples")
    vae = os.path.join(run, "vae_v4.bundle")

    e1, e2 = str(root / "eval_a"), str(root / "eval_b")
    main(["eval", "--data", data, "--vae", vae, "--generated", samples,
          "--out", e1, "--config", cfg_path])
    main(["eval", "--data", data, "--vae", vae, "--generated", samples,
          "--out", e2, "--config", cfg_path])
    with open(os.path.join(e1, "report.csv"), "rb") as f:
        a = f.read()
    with open(os.path.join(e2, "report.csv"), "rb") as f:
        b = f.read()
    assert a == b


def test_sampled_scene_files_follow_schema(workdir):
    import json

    root, _ = workdir
    scene_dir = os.path.join(str(root / "samples"), "scenes")
    for name in sorted(os.listdir(scene_dir)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(scene_dir, name)) as f:
            d = json.load(f)
        assert set(d) == {"scene_id", "floor_plan", "objects"}
        for o in d["objects"]:
            assert o["codebook_index"] is not None
            assert len(o["F"]) == 32
            assert 0 <= o["class"] < 5


def test_generated_objects_stay_in_class_partition(workdir):
    import json

    from scenevq.bundle import load_vqvae

    root, _ = workdir
    vae = load_vqvae(os.path.join(str(root / "run"), "vae_v4.bundle"))
    scene_dir = os.path.join(str(root / "samples"), "scenes")
    checked = 0
    for name in sorted(os.listdir(scene_dir)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(scene_dir, name)) as f:
            d = json.load(f)
        for o in d["objects"]:
            assert vae.codebook_.indicator(o["class"] + 1, o["codebook_index"]) == 1
            checked += 1
    assert checked > 0


def test_ablate_variants_cli(workdir, capsys):
    root, cfg_path = workdir
    data = str(root / "data")
    out = str(root / "ablate_variants")
    assert main(["ablate", "--study", "variants", "--data", data, "--out", out,
                 "--seed", "2", "--steps", "60", "--config", cfg_path]) == 0
    csv_path = os.path.join(out, "ablation_variants.csv")
    assert os.path.exists(csv_path)
    with open(csv_path) as f:
        lines = f.read().strip().splitlines()
    assert lines[0] == "variant,final_loss,utilization,heldout_cd_x1e3,heldout_p2m_x1e3"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["'v1'", "'v2'", "'v3'", "'v4'"]


def test_ablate_steps_cli(workdir):
    root, cfg_path = workdir
    data = str(root / "data")
    run = str(root / "run")
    out = str(root / "ablate")
    vae = os.path.join(run, "vae_v4.bundle")
    lfmm = os.path.join(run, "lfmm.bundle")
    assert main(["ablate", "--study", "steps", "--data", data, "--vae", vae,
                 "--lfmm", lfmm, "--out", out, "--scenes", "4", "--seed", "2",
                 "--config", cfg_path]) == 0
    assert os.path.exists(os.path.join(out, "ablation_steps.csv"))
