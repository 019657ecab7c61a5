import csv
import json
import shutil

import numpy as np
import pytest

from covomix import cli, dsp
from covomix.checkpoint import load_archive
from covomix.dataprep import read_utterances_jsonl
from covomix.synthetic import make_recording, write_recording
from covomix.training import read_curve

from oracles import algorithm1

TINY = """\
codebook_size = 12
t2s_enc_layers = 1
t2s_dec_layers = 1
t2s_enc_dim = 16
t2s_dec_dim = 16
t2s_heads = 2
t2s_epochs = 2
ac_dim = 16
ac_layers = 1
ac_heads = 2
ac_emb_dim = 4
ac_epochs = 2
batch_size = 3
steps = 3
max_frames = 40
vocoder_iters = 3
"""


def run(*argv):
    return cli.main([str(a) for a in argv])


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def project(tmp_path_factory):
    root = tmp_path_factory.mktemp("proj")
    data = root / "data"
    write_recording(data, "ab", make_recording(n_episodes=4, seed=1, speakers=("A", "B")))
    write_recording(data, "cd", make_recording(n_episodes=3, seed=2, speakers=("C", "D")))
    cfg = root / "run.cfg"
    cfg.write_text(TINY + f"data_dir = {data}\nwork_dir = {root / 'work'}\n")
    base = ["--config", cfg]
    assert run("prepare", *base) == 0
    assert run("fit-codebook", *base) == 0
    assert run("train-t2s", *base) == 0
    assert run("train-acoustic", *base) == 0
    return root, base


def test_prepare_matches_algorithm1_oracle(project):
    root, _ = project
    rows = [json.loads(x) for x in (root / "work" / "manifest.jsonl").read_text().splitlines()]
    for stem in ("ab", "cd"):
        utts = read_utterances_jsonl((root / "data" / f"{stem}.jsonl").read_text().splitlines())
        want = algorithm1([(u.speaker, u.start_s, u.end_s) for u in utts], 40.0)
        got = [[(u["speaker"], u["start"], u["end"]) for u in r["utterances"]] for r in rows if r["source"] == f"{stem}.jsonl"]
        assert got == want and len(want) > 0
    assert all(r["featurized"] for r in rows)
    assert {tuple(r["speakers"]) for r in rows} <= {("A", "B"), ("B", "A"), ("C", "D"), ("D", "C")}
    vocab = (root / "work" / "vocab.txt").read_text().splitlines()
    assert vocab[:6] == ["<pad>", "<bos>", "<eos>", "<unk>", "[spkchange]", "[laughter]"]


def test_artifacts_are_byte_identical_on_rerun(project, tmp_path):
    root, base = project
    cfg2 = tmp_path / "run.cfg"
    cfg2.write_text(TINY + f"data_dir = {root / 'data'}\nwork_dir = {tmp_path / 'work'}\n")
    for cmd in ("prepare", "fit-codebook", "train-t2s", "train-acoustic"):
        assert run(cmd, "--config", cfg2) == 0
    assert tree_bytes(tmp_path / "work") == tree_bytes(root / "work")


def test_training_outputs(project):
    work = project[0] / "work"
    curve = read_curve(work / "t2s_loss.csv")
    assert [r[0] for r in curve] == [0, 1]
    assert (work / "t2s.ckpt").exists() and (work / "acoustic-mix.ckpt").exists()
    assert json.loads((work / "t2s.state.json").read_text())["epoch"] == 2


def test_zero_epochs_saves_init_and_empty_curve(project, tmp_path):
    root, base = project
    work = tmp_path / "w"
    shutil.copytree(root / "work", work)
    for f in work.glob("t2s*"):
        f.unlink()
    assert run("train-t2s", *base, "--set", f"work_dir={work}", "--set", "t2s_epochs=0") == 0
    assert read_curve(work / "t2s_loss.csv") == []
    assert json.loads((work / "t2s.state.json").read_text())["best_epoch"] == -1
    init = load_archive(work / "t2s.ckpt")
    assert set(init) and not any(k.startswith("adam.") for k in init)


def test_resume_equals_straight_run(project, tmp_path):
    root, base = project
    a, b = tmp_path / "a", tmp_path / "b"
    for w in (a, b):
        shutil.copytree(root / "work", w)
    assert run("train-acoustic", *base, "--set", f"work_dir={a}", "--set", "ac_epochs=3") == 0
    assert run("train-acoustic", *base, "--set", f"work_dir={b}", "--set", "ac_epochs=1") == 0
    assert run("train-acoustic", *base, "--set", f"work_dir={b}", "--set", "ac_epochs=3", "--resume") == 0
    pa, pb = load_archive(a / "acoustic-mix.last.ckpt"), load_archive(b / "acoustic-mix.last.ckpt")
    assert set(pa) == set(pb) and all(np.array_equal(pa[k], pb[k]) for k in pa)
    assert (a / "acoustic-mix_loss.csv").read_bytes() == (b / "acoustic-mix_loss.csv").read_bytes()


def test_nan_loss_exits_3_and_keeps_last_good(project, tmp_path, capsys):
    root, base = project
    work = tmp_path / "w"
    shutil.copytree(root / "work", work)
    before = (work / "t2s.ckpt").read_bytes()
    code = run("train-t2s", *base, "--set", f"work_dir={work}", "--set", "lr=1e30", "--set", "t2s_epochs=6")
    assert code == 3 and "numeric failure" in capsys.readouterr().err
    load_archive(work / "t2s.ckpt")
    assert (work / "t2s.ckpt").read_bytes() != b"" and before


def prompts(root):
    mels = sorted((root / "work" / "mels").glob("*.ch*.mel"))
    return [mels[0], mels[1]]


def test_synth_twice_identical(project, tmp_path):
    root, base = project
    p = prompts(root)
    args = ["synth", *base, "--text", "hello yeah [spkchange] okay", "--prompt", p[0], "--prompt", p[1],
            "--seed", 5]
    assert run(*args, "--out", tmp_path / "o1") == 0
    assert run(*args, "--out", tmp_path / "o2") == 0
    assert (tmp_path / "o1" / "synth.wav").read_bytes() == (tmp_path / "o2" / "synth.wav").read_bytes()
    assert {f.name for f in (tmp_path / "o1").iterdir()} == {"synth.ch0.sem", "synth.ch1.sem", "synth.mel",
                                                             "synth.wav"}


def test_synth_missing_prompt_lists_streams(project, tmp_path, capsys):
    root, base = project
    code = run("synth", *base, "--text", "hello", "--prompt", prompts(root)[0], "--out", tmp_path)
    err = capsys.readouterr().err
    assert code == 2 and "missing prompt" in err and "stream 1" in err


def test_stereo_and_single_variants_and_vc(project, tmp_path):
    root, base = project
    work = tmp_path / "w"
    shutil.copytree(root / "work", work)
    p = prompts(root)
    over = ["--set", f"work_dir={work}", "--set", "ac_epochs=1"]
    for variant in ("stereo", "single"):
        assert run("train-acoustic", *base, *over, "--variant", variant) == 0
        out = tmp_path / variant
        assert run("synth", *base, *over, "--variant", variant, "--text", "hello [spkchange] sure",
                   "--prompt", p[0], "--prompt", p[1], "--out", out) == 0
        names = {f.name for f in out.iterdir()}
        assert ("synth.ch0.wav" in names) == (variant == "stereo")
    assert run("vc", *base, *over, "--source", root / "data" / "ab.wav", "--prompt", p[0], "--prompt", p[1],
               "--out", tmp_path / "vc") == 0
    assert dsp.read_mel(tmp_path / "vc" / "vc.mel").n_mels == 80


def test_eval_reports(project, tmp_path):
    root, base = project
    mels = sorted((root / "work" / "mels").glob("*.mix.mel"))[:3]
    hyp, ref = tmp_path / "hyp", tmp_path / "ref"
    for d in (hyp, ref):
        d.mkdir()
        for m in mels:
            shutil.copy(m, d / m.name)
        shutil.copy(root / "data" / "ab.jsonl", d / "ab.jsonl")
        np.save(d / "ab.emb.npy", np.random.default_rng(0).standard_normal((4, 8)))
    assert run("eval", *base, "--hyp", hyp, "--ref", ref, "--out", tmp_path / "rep") == 0
    with open(tmp_path / "rep" / "mcd.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 and all(float(r["mcd_dtw"]) == 0.0 for r in rows)
    summary = json.loads((tmp_path / "rep" / "summary.json").read_text())
    cm = np.array(summary["hyp"]["consistency"]["ab"])
    assert cm.shape == (4, 4) and np.all(np.diag(cm) == 1.0)
    assert summary["hyp"]["turn_taking"] == summary["ref"]["turn_taking"]
    assert (tmp_path / "rep" / "hist_ref.csv").exists()


def test_eval_unpaired_and_empty(project, tmp_path):
    root, base = project
    hyp, ref = tmp_path / "h", tmp_path / "r"
    hyp.mkdir(), ref.mkdir()
    assert run("eval", *base, "--hyp", hyp, "--ref", ref, "--out", tmp_path / "o") != 0
    m = sorted((root / "work" / "mels").glob("*.mix.mel"))
    shutil.copy(m[0], hyp / m[0].name)
    shutil.copy(m[0], ref / m[0].name)
    shutil.copy(m[1], hyp / m[1].name)
    assert run("eval", *base, "--hyp", hyp, "--ref", ref, "--out", tmp_path / "o") == 2


def test_exit_codes_and_empty_prepare(tmp_path, capsys):
    assert run("no-such-command") == 1
    assert run("synth") == 1
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run("prepare", "--set", f"data_dir={empty}", "--set", f"work_dir={tmp_path / 'w'}") == 0
    assert (tmp_path / "w" / "manifest.jsonl").read_text() == ""
    assert run("prepare", "--set", f"data_dir={tmp_path / 'missing'}") == 2
    assert run("prepare", "--set", "steps=0") == 2
    assert run("prepare", "--threads", 0, "--set", f"data_dir={empty}") == 1


def test_malformed_jsonl_reports_line(tmp_path, capsys):
    data = tmp_path / "d"
    data.mkdir()
    (data / "x.jsonl").write_text('{"speaker": "A", "start": 0, "end": 1}\n{oops\n')
    assert run("prepare", "--set", f"data_dir={data}", "--set", f"work_dir={tmp_path / 'w'}") == 2
    assert "line 2" in capsys.readouterr().err


def test_threads_env_fallback(monkeypatch, tmp_path):
    monkeypatch.setenv("COVOMIX_THREADS", "x")
    assert run("prepare", "--set", f"data_dir={tmp_path}") == 1
