import csv
import subprocess
import sys

import pytest

from psrspoof.cli import build_parser, main
from psrspoof.dataset import CorpusManifest
from psrspoof.nn.model import DetectorModel, ModelConfig
from psrspoof.features import QuantizerParams

TINY = ["d_model=8", "ffn_hidden=8", "heads=2", "max_steps=2"]
QUANT = ["quantizer_levels=8", "quantizer_epochs=1", "quantizer_samples=10000"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    assert main(["generate", "--train", "10", "--test", "4", "--seed", "7", "--threads", "1",
                 "--out", str(corpus)]) == 0
    qdir = root / "q"
    assert main(["pretrain-quantizer", "--corpus", str(corpus), "--out", str(qdir), "--seed", "1", *QUANT]) == 0
    return root, corpus, qdir / "quantizer.qntz"


def test_help_lists_every_flag(capsys):
    expected = {"generate": ["--config", "--out", "--seed", "--threads", "--train", "--test"],
                "sweep": ["--variants", "--layers", "--threshold", "--quantizer", "--corpus"],
                "evaluate": ["--checkpoint", "--threshold"],
                "export-plot-data": ["--checkpoint", "--index"]}
    for cmd, flags in expected.items():
        with pytest.raises(SystemExit) as info:
            build_parser().parse_args([cmd, "--help"])
        assert info.value.code == 0
        out = capsys.readouterr().out
        for flag in flags:
            assert flag in out, (cmd, flag)


def test_usage_errors_exit_1(tmp_path, capsys):
    assert main(["generate", "--bogus"]) == 1
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["generate", "--out", str(tmp_path), "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["generate", "--out", str(tmp_path), "not_a_key=3"]) == 1
    assert main(["generate", "--out", str(tmp_path), "--train", "0"]) == 1
    assert main(["sweep", "--corpus", "x", "--quantizer", "q", "--layers", "0..9"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_generate_is_deterministic(workspace, tmp_path):
    _, corpus, _ = workspace
    again = tmp_path / "again"
    assert main(["generate", "--train", "10", "--test", "4", "--seed", "7", "--threads", "2",
                 "--out", str(again)]) == 0
    assert (again / "manifest.txt").read_bytes() == (corpus / "manifest.txt").read_bytes()
    m = CorpusManifest.load(corpus / "manifest.txt")
    assert len(m.split("train")) == 10 and len(m.split("test")) == 4


def test_config_file_and_override_precedence(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("# desk corpus\nshift_max_m = 900.0\nelevation_mask_deg = 7.5\n")
    out = tmp_path / "gen"
    assert main(["generate", "--train", "1", "--test", "1", "--out", str(out), "--config", str(cfg_file),
                 "elevation_mask_deg=6.0"]) == 0
    info = (out / "generate_info.txt").read_text()
    assert "shift_max_m = 900.0" in info and "elevation_mask_deg = 6.0" in info
    assert "config_hash = " in info


def test_missing_corpus_is_data_error(tmp_path):
    assert main(["pretrain-quantizer", "--corpus", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2


def test_corrupt_quantizer_is_data_error(workspace, tmp_path):
    _, corpus, _ = workspace
    bad = tmp_path / "bad.qntz"
    bad.write_bytes(b"QNTZ\0\0")
    assert main(["train", "--corpus", str(corpus), "--quantizer", str(bad), "--out", str(tmp_path), *TINY]) == 2


def test_train_evaluate_export(workspace, tmp_path):
    _, corpus, qpath = workspace
    out = tmp_path / "run"
    assert main(["train", "--corpus", str(corpus), "--quantizer", str(qpath), "--out", str(out),
                 "--seed", "3", "variant=lstm-early", *TINY]) == 0
    curve = _rows(out / "loss_curve.csv")
    assert len(curve) == 2 and set(curve[0]) == {"step", "loss", "grad_norm"}
    model, meta = DetectorModel.load(out / "model.psrd")
    assert model.config.encoder == "lstm" and "config_hash" in meta

    assert main(["evaluate", "--corpus", str(corpus), "--checkpoint", str(out / "model.psrd"),
                 "--out", str(out)]) == 0
    rows = _rows(out / "metrics.csv")
    assert [r["subset"] for r in rows][-1] == "Total"
    for r in rows:
        pos, neg = int(r["positives"]), int(r["negatives"])
        assert float(r["err"]) * (pos + neg) == pytest.approx(float(r["fa"]) * neg + float(r["md"]) * pos,
                                                              abs=1e-9)

    assert main(["export-plot-data", "--corpus", str(corpus), "--checkpoint", str(out / "model.psrd"),
                 "--out", str(out), "--index", "1"]) == 0
    scores = _rows(out / "scores.csv")
    assert len(scores) == 4 * 568
    assert all(0.0 <= float(r["score"]) <= 1.0 for r in scores)
    series = _rows(out / "series.csv")
    assert set(series[0]) == {"epoch", "channel", "label", "psr_m", "delta_m", "delta2_m", "compressed_delta2"}
    assert main(["export-plot-data", "--corpus", str(corpus), "--checkpoint", str(out / "model.psrd"),
                 "--out", str(out), "--index", "99"]) == 1


def test_constant_zero_detector(workspace, tmp_path):
    _, corpus, qpath = workspace
    q = QuantizerParams.load(qpath)
    cfg = ModelConfig.from_variant("mha-early", blocks=1, d_model=8, ffn_hidden=8, heads=2, levels=q.N)
    model = DetectorModel(cfg, quantizer=q)
    model.params["head.w"][:] = 0.0
    model.params["head.b"][:] = [-50.0, 50.0]
    ckpt = tmp_path / "zero.psrd"
    model.save(ckpt)
    assert main(["evaluate", "--corpus", str(corpus), "--checkpoint", str(ckpt), "--out", str(tmp_path)]) == 0
    total = _rows(tmp_path / "metrics.csv")[-1]
    manifest = CorpusManifest.load(corpus / "manifest.txt")
    assert float(total["md"]) == 1.0 and float(total["fa"]) == 0.0
    assert float(total["err"]) == manifest.test_spoofed_fraction


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_3(workspace, tmp_path):
    _, corpus, qpath = workspace
    assert main(["train", "--corpus", str(corpus), "--quantizer", str(qpath), "--out", str(tmp_path),
                 *TINY, "learning_rate=1e300", "grad_clip=1e300"]) == 3


def test_sweep_cardinality(workspace, tmp_path):
    _, corpus, qpath = workspace
    assert main(["sweep", "--corpus", str(corpus), "--quantizer", str(qpath), "--out", str(tmp_path),
                 "--variants", "mha-early,lstm-early", "--layers", "1..3", "max_steps=1",
                 "d_model=8", "ffn_hidden=8", "heads=2"]) == 0
    rows = _rows(tmp_path / "sweep.csv")
    assert len(rows) == 6
    assert [(r["variant"], r["N"]) for r in rows] == [(v, str(n)) for v in ("mha-early", "lstm-early")
                                                      for n in (1, 2, 3)]
    assert len({(r["positives"], r["negatives"]) for r in rows}) == 1


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "psrspoof.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "generate" in res.stdout
