#!/usr/bin/env python3
"""Independent reference logits for the runtime tests.

tiny_reference.json: float64 NumPy forward of the tiny model archive written by
`bench make-tiny --seed 0`, for pre-norm and post-norm wiring.

hf_gpt2_small_random/: a randomly initialised GPT-2 (2 layers, width 32,
vocab 256) saved with Hugging Face tensor names, plus torch logits.

    build/tools/bench make-tiny --seed 0 --out /tmp/tiny0
    python3 tools/make_runtime_fixtures.py --tiny /tmp/tiny0 --out tests/fixtures
"""
import argparse
import json
import pathlib

import numpy as np
from safetensors.numpy import load_file

TEXTS = ["Hello, world!", "The quick brown fox jumps over the lazy dog.", "a"]


def layer_norm(x, g, b, eps):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)))


def forward(w, cfg, tokens, post_norm):
    t = {k: v.astype(np.float64) for k, v in w.items()}
    d, h = cfg["d_model"], cfg["n_heads"]
    hd = d // h
    eps = float(np.float32(cfg["layer_norm_eps"]))
    n = len(tokens)
    x = t["embed"][tokens] + t["pos_embed"][:n]
    mask = np.triu(np.full((n, n), -np.inf), 1)
    for i in range(cfg["n_layers"]):
        p = f"blocks.{i}."
        a_in = x if post_norm else layer_norm(x, t[p + "ln1.weight"], t[p + "ln1.bias"], eps)
        qkv = a_in @ t[p + "attn.qkv.weight"].T + t[p + "attn.qkv.bias"]
        q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
        heads = []
        for j in range(h):
            s = slice(j * hd, (j + 1) * hd)
            sc = q[:, s] @ k[:, s].T / np.sqrt(hd) + mask
            sc = np.exp(sc - sc.max(-1, keepdims=True))
            sc /= sc.sum(-1, keepdims=True)
            heads.append(sc @ v[:, s])
        attn = np.concatenate(heads, -1) @ t[p + "attn.out.weight"].T + t[p + "attn.out.bias"]
        x = x + attn
        if post_norm:
            x = layer_norm(x, t[p + "ln1.weight"], t[p + "ln1.bias"], eps)
        m_in = x if post_norm else layer_norm(x, t[p + "ln2.weight"], t[p + "ln2.bias"], eps)
        mlp = gelu(m_in @ t[p + "mlp.fc.weight"].T + t[p + "mlp.fc.bias"]) @ t[p + "mlp.proj.weight"].T + t[p + "mlp.proj.bias"]
        x = x + mlp
        if post_norm:
            x = layer_norm(x, t[p + "ln2.weight"], t[p + "ln2.bias"], eps)
    x = layer_norm(x, t["ln_final.weight"], t["ln_final.bias"], eps)
    return x @ t["unembed"].T


def tiny_fixture(tiny_dir, out):
    w = load_file(str(tiny_dir / "model.safetensors"))
    cfg = json.loads((tiny_dir / "config.json").read_text())
    cases = []
    for text in TEXTS:
        tokens = list(text.encode("utf-8"))
        for post in (False, True):
            logits = forward(w, cfg, tokens, post)
            cases.append({"text": text, "tokens": tokens, "norm_style": "post" if post else "pre",
                          "logits": logits.round(9).tolist()})
    (out / "tiny_reference.json").write_text(json.dumps({"seed": 0, "cases": cases}))


def hf_fixture(out):
    import torch
    from safetensors.torch import save_file
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(0)
    cfg = GPT2Config(vocab_size=256, n_positions=64, n_embd=32, n_layer=2, n_head=4,
                     activation_function="gelu_new", bos_token_id=0, eos_token_id=0, resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0)
    model = GPT2LMHeadModel(cfg).eval()
    with torch.no_grad():
        for p in model.parameters():  # move biases and LayerNorms away from their trivial init
            p.add_(0.05 * torch.randn_like(p))
    d = out / "hf_gpt2_small_random"
    d.mkdir(parents=True, exist_ok=True)
    state = {k: v.contiguous() for k, v in model.state_dict().items() if not k.endswith(".attn.bias")
             and not k.endswith(".attn.masked_bias") and k != "lm_head.weight"}
    save_file(state, str(d / "model.safetensors"))
    c = cfg.to_dict()
    c["_name_or_path"] = "random-gpt2"
    (d / "config.json").write_text(json.dumps(c, indent=1))
    cases = []
    for text in TEXTS:
        tokens = list(text.encode("utf-8"))
        with torch.no_grad():
            logits = model(torch.tensor([tokens])).logits[0].double().numpy()
        cases.append({"text": text, "tokens": tokens, "logits": logits.round(7).tolist()})
    (d / "reference.json").write_text(json.dumps({"cases": cases}))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tiny", required=True, type=pathlib.Path)
    ap.add_argument("--out", required=True, type=pathlib.Path)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    tiny_fixture(args.tiny, args.out)
    hf_fixture(args.out)


if __name__ == "__main__":
    main()
