"""End to end through the command line on a throwaway toy corpus.

Run: python3 demos/05_cli_walkthrough.py
Equivalent shell commands are printed as they run.
"""
# %%
import tempfile
from pathlib import Path

from covomix import cli
from covomix.synthetic import make_recording, write_recording

root = Path(tempfile.mkdtemp(prefix="covomix-demo-"))
write_recording(root / "data", "talk1", make_recording(n_episodes=5, seed=1))
write_recording(root / "data", "talk2", make_recording(n_episodes=4, seed=2, speakers=("C", "D")))
(root / "tiny.cfg").write_text(f"""\
data_dir = {root / 'data'}
work_dir = {root / 'work'}
codebook_size = 16
t2s_enc_layers = 1
t2s_dec_layers = 1
t2s_enc_dim = 32
t2s_dec_dim = 32
t2s_heads = 2
t2s_epochs = 3
ac_dim = 32
ac_layers = 1
ac_heads = 2
ac_emb_dim = 8
ac_epochs = 3
steps = 8
max_frames = 100
vocoder_iters = 16
""")


def run(*argv):
    argv = [str(a) for a in argv]
    print("$ covomix", " ".join(argv))
    code = cli.main(argv)
    print("  exit", code)
    return code


# %%
cfg = ["--config", root / "tiny.cfg"]
run("prepare", *cfg)
run("fit-codebook", *cfg)
run("train-t2s", *cfg)
run("train-acoustic", *cfg)
prompts = sorted((root / "work" / "mels").glob("*.ch*.mel"))[:2]
run("synth", *cfg, "--text", "hello yeah [spkchange] sure thanks", "--prompt", prompts[0],
    "--prompt", prompts[1], "--out", root / "out")
run("vc", *cfg, "--source", root / "data" / "talk1.wav", "--prompt", prompts[0], "--prompt", prompts[1],
    "--out", root / "vc")
run("eval", *cfg, "--hyp", root / "work" / "mels", "--ref", root / "work" / "mels", "--out", root / "report")
print("artifacts under", root)
