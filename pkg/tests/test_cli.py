import json

import numpy as np
import pytest

from zipdialog.cli import RunConfig, main
from zipdialog.features import read_fmx, write_fmx
from zipdialog.model import load_checkpoint
from zipdialog.synthdata import SyntheticDomain, gen_eval_set
from zipdialog.text import render

TINY = """
# tiny model for plumbing tests
model.text_dim = 8
model.hidden = 16
model.text_layers = 1
model.trunk_layers = 1
model.time_features = 8
train.batch_size = 4
monologue_steps = 2
dialogue_steps = 2
stereo_steps = 2
"""


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    for kind, n in [("monologue", 8), ("dialogue_mono", 8), ("dialogue_stereo", 8)]:
        assert main(["gen-data", "--kind", kind, "--n", str(n), "--seed", "1",
                     "--out", str(root / kind)]) == 0
    return root


@pytest.fixture(scope="module")
def trained(corpora, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "run.cfg"
    cfg.write_text(TINY + f"monologue_corpus = {corpora / 'monologue'}\n"
                   f"dialogue_corpus = {corpora / 'dialogue_mono'}\n"
                   f"stereo_corpus = {corpora / 'dialogue_stereo'}\n")
    assert main(["train", "--config", str(cfg), "--out", str(out / "ckpt")]) == 0
    return out / "ckpt", cfg


class TestRunConfig:
    def test_parse_and_render_roundtrip(self):
        rc = RunConfig.parse(TINY + "train.lr = 0.1\ncfg.g0 = 3\nmodel.speaker_embeddings = false\n")
        assert rc.model.hidden == 16 and rc.train.lr == 0.1 and rc.cfg.g0 == 3.0
        assert rc.model.speaker_embeddings is False
        assert RunConfig.parse(rc.render()) == rc

    @pytest.mark.parametrize("text", ["bogus = 1", "model.bogus = 1", "net.hidden = 3",
                                      "model.hidden = abc", "just words"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            RunConfig.parse(text)


class TestGenData:
    def test_same_seed_same_bytes(self, tmp_path):
        for d in ("a", "b"):
            assert main(["gen-data", "--kind", "dialogue_mono", "--n", "3", "--seed", "4",
                         "--out", str(tmp_path / d)]) == 0
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_empty_corpus(self, tmp_path):
        assert main(["gen-data", "--kind", "monologue", "--n", "0", "--out", str(tmp_path / "e")]) == 0
        assert (tmp_path / "e" / "manifest.jsonl").read_text() == ""

    def test_stereo_headers(self, corpora):
        for f in (corpora / "dialogue_stereo").glob("*.fmx"):
            assert f.read_bytes()[12:16] == (2).to_bytes(4, "little")

    def test_non_empty_out_dir(self, tmp_path, capsys):
        (tmp_path / "x").mkdir()
        (tmp_path / "x" / "junk").write_text("1")
        args = ["gen-data", "--kind", "monologue", "--n", "1", "--out", str(tmp_path / "x")]
        assert main(args) == 2
        assert "--force" in capsys.readouterr().err
        assert main(args + ["--force"]) == 0

    def test_bad_kind(self, tmp_path):
        assert main(["gen-data", "--kind", "podcast", "--n", "1", "--out", str(tmp_path)]) == 2


class TestTrain:
    def test_full_curriculum(self, trained):
        ckpt, _ = trained
        names = sorted(p.name for p in ckpt.glob("*.zdck"))
        assert names == ["dialogue_finetune.zdck", "monologue_pretrain.zdck", "stereo_finetune.zdck"]
        assert (ckpt / "loss.csv").read_text().count("\n") == 7
        resolved = RunConfig.parse((ckpt / "resolved_config.txt").read_text())
        assert resolved.model.hidden == 16
        model, meta = load_checkpoint(ckpt / "stereo_finetune.zdck")
        assert model.has_stereo and meta["stage"] == "stereo_finetune"

    def test_no_curriculum_and_no_se(self, trained, tmp_path):
        _, cfg = trained
        out = tmp_path / "abl"
        with pytest.warns(UserWarning, match="monologue pre-training skipped"):
            assert main(["train", "--config", str(cfg), "--out", str(out), "--no-curriculum",
                         "--no-se-loss"]) == 0
        assert not (out / "monologue_pretrain.zdck").exists()
        resolved = RunConfig.parse((out / "resolved_config.txt").read_text())
        assert resolved.train.lam == 0.0

    def test_unknown_key(self, tmp_path):
        (tmp_path / "bad.cfg").write_text("train.learning_rate = 1\n")
        assert main(["train", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "o")]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure_exit_code(self, trained, tmp_path):
        _, cfg = trained
        bad = tmp_path / "diverge.cfg"
        bad.write_text(cfg.read_text() + "train.lr = 1e200\n")
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 3


class TestSynthAndEval:
    def test_synth_defaults_and_seed(self, trained, tmp_path):
        ckpt, _ = trained
        item = gen_eval_set(SyntheticDomain.create(0), 1, np.random.default_rng(0))[0]
        write_fmx(tmp_path / "p.fmx", item.prompt.features)
        args = ["synth", "--checkpoint", str(ckpt / "dialogue_finetune.zdck"),
                "--prompt", str(tmp_path / "p.fmx"), "--prompt-text", render(item.prompt.script),
                "--text", render(item.target.script)]
        assert main(args + ["--out", str(tmp_path / "a.fmx")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.fmx")]) == 0
        assert main(args + ["--out", str(tmp_path / "c.fmx"), "--seed", "9"]) == 0
        a = (tmp_path / "a.fmx").read_bytes()
        assert a == (tmp_path / "b.fmx").read_bytes() != (tmp_path / "c.fmx").read_bytes()
        meta = json.loads((tmp_path / "a.fmx.json").read_text())
        assert meta["steps"] == 16 and read_fmx(tmp_path / "a.fmx").frames == \
            4 * item.target.script.num_tokens()

    def test_pseudo_stereo_route(self, trained, tmp_path):
        ckpt, _ = trained
        dom = SyntheticDomain.create(0)
        rng = np.random.default_rng(0)
        a = dom.sample(rng, "monologue", speakers=(0,))
        b = dom.sample(rng, "monologue", speakers=(1,))
        write_fmx(tmp_path / "a.fmx", a.features)
        write_fmx(tmp_path / "b.fmx", b.features)
        text_b = render(b.script).replace("[S1]", "[S2]")
        assert main(["synth", "--checkpoint", str(ckpt / "stereo_finetune.zdck"),
                     "--prompt", str(tmp_path / "a.fmx"), "--prompt-text", render(a.script),
                     "--prompt", str(tmp_path / "b.fmx"), "--prompt-text", text_b,
                     "--text", "[S1] w01 w02 [S2] w03", "--steps", "2",
                     "--out", str(tmp_path / "o.fmx")]) == 0
        assert read_fmx(tmp_path / "o.fmx").channels == 2

    def test_prompt_text_count(self, trained, tmp_path):
        ckpt, _ = trained
        assert main(["synth", "--checkpoint", str(ckpt / "dialogue_finetune.zdck"),
                     "--prompt", "x.fmx", "--prompt", "y.fmx", "--prompt-text", "[S1] w00",
                     "--text", "[S1] w00", "--out", str(tmp_path / "o.fmx")]) == 2

    def test_self_eval(self, corpora, tmp_path, capsys):
        d = corpora / "dialogue_mono"
        assert main(["eval", "--ref", str(d), "--hyp", str(d), "--out", str(tmp_path / "r.json")]) == 0
        line = json.loads(capsys.readouterr().out)
        assert line["mean_wer"] == 0 and line["mean_cpwer"] == 0 and line["mean_gap"] == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert len(report["per_dialogue"]) == 8

    def test_missing_hyp_named(self, corpora, tmp_path, capsys):
        d = corpora / "dialogue_mono"
        (tmp_path / "hyp").mkdir()
        assert main(["eval", "--ref", str(d), "--hyp", str(tmp_path / "hyp")]) == 2
        assert "000000.fmx" in capsys.readouterr().err


def test_filter(tmp_path, capsys):
    rec = {"utterances": [{"speaker": "A", "start": 0, "text": "one two three four five six"}],
           "duration_s": 30, "quality_score": 2.7}
    (tmp_path / "in.jsonl").write_text(json.dumps(rec) + "\n")
    assert main(["filter", "--in", str(tmp_path / "in.jsonl"), "--out", str(tmp_path / "o.jsonl")]) == 0
    assert json.loads((tmp_path / "o.jsonl").read_text())["reasons"] == ["quality_gate"]
    assert json.loads(capsys.readouterr().out)["kept"] == 0


def test_usage_errors():
    assert main([]) == 2
    assert main(["--help"]) == 0
