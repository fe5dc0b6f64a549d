"""Synthetic multilingual worlds shared by the pipeline and acceptance tests."""

import json
from pathlib import Path

import numpy as np

from xlsent.embed_store import EmbeddingTable, save_text_format


def random_orthogonal(d, rng):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def polar_latent(n_words, dim, rng, strength=1.0):
    """Rows 0, 2, 4, ... lean positive along axis 0, odd rows negative."""
    latent = rng.normal(size=(n_words, dim))
    signs = np.where(np.arange(n_words) % 2 == 0, 1.0, -1.0)
    latent[:, 0] = signs * (2.0 * strength + 0.5 * np.abs(latent[:, 0]))
    return latent


def polar_sentence(rng, n_words, label, length):
    start = 0 if label == "pos" else 1
    return [int(i) for i in rng.choice(np.arange(start, n_words, 2), size=length)]


def write_lines(path, lines):
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def build_workspace(root, n_words=400, dim=16, seed=0, encoder_init="random"):
    """A small eng/fin/kpv/mdf world and its pipeline config; returns the config path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    latent = polar_latent(n_words, dim, rng)

    # English lives in a larger space so PCA has something to remove
    lift = np.linalg.qr(rng.normal(size=(dim + 8, dim)))[0]
    eng = latent @ lift.T + 0.01 * rng.normal(size=(n_words, dim + 8))
    fin = latent @ random_orthogonal(dim, rng) + 0.01 * rng.normal(size=(n_words, dim))
    save_text_format(EmbeddingTable([f"e{i}" for i in range(n_words)], eng), root / "eng.vec")
    save_text_format(EmbeddingTable([f"f{i}" for i in range(n_words)], fin), root / "fin.vec")

    write_lines(root / "fin-eng.tsv", [f"f{i}\te{i}" for i in range(0, n_words, 2)] +
                [f"f{i}\te{i}" for i in range(1, n_words, 2)])
    for lang in ("kpv", "mdf"):
        half = n_words // 2
        write_lines(root / f"{lang}.base.tsv", [f"{lang}{i}\tf{i}" for i in range(half)] +
                    [f"{lang} multi{i}\tf{i}" for i in range(3)])
        write_lines(root / f"{lang}.pred.tsv", [f"{lang}{i}\tf{i}" for i in range(half - 5, n_words)])
    corpus = []
    for _ in range(60):
        label = "pos" if rng.random() < 0.5 else "neg"
        words = polar_sentence(rng, 40, label, 6)
        corpus.append(" ".join([f"kpv{i}" for i in words] + ["kpvnew"]))
    write_lines(root / "kpv.corpus.txt", corpus)

    sts = []
    for _ in range(40):
        a = rng.integers(0, n_words, size=4)
        b = np.concatenate([a[:2], rng.integers(0, n_words, size=2)])
        sts.append(f"{rng.uniform(0, 5):.2f}\t{' '.join(f'e{i}' for i in a)}\t{' '.join(f'e{i}' for i in b)}")
    write_lines(root / "sts.tsv", sts)

    labeled, rated = [], []
    for k in range(240):
        label = ("pos", "neg")[k % 2]
        words = " ".join(f"e{i}" for i in polar_sentence(rng, n_words, label, 5))
        labeled.append(f"{label}\t{words}")
        rated.append(f"{5 if label == 'pos' else 1}\t{words}")
    rated.append("3\te0 e1")
    write_lines(root / "sst.tsv", labeled)
    write_lines(root / "reviews.tsv", rated)

    langs = ["fin", "kpv", "mdf"]
    prefixes = {"fin": "f", "kpv": "kpv", "mdf": "mdf"}
    rows = {lang: [] for lang in langs}
    index_labels = []
    for idx in range(30):
        label = ("neg", "pos")[idx % 2]
        words = polar_sentence(rng, n_words // 2, label, 5)
        for lang in langs:
            rows[lang].append(" ".join(f"{prefixes[lang]}{i}" for i in words))
        index_labels.append(f"{idx}\t{label}")
    for lang in langs:
        write_lines(root / f"test.{lang}.txt", rows[lang])
    (root / "test.json").write_text(json.dumps(
        {"languages": langs, "files": {lang: f"test.{lang}.txt" for lang in langs}}))
    write_lines(root / "test.labels.tsv", index_labels)
    eng_test = [f"{('neg', 'pos')[k % 2]}\t" + " ".join(
        f"e{i}" for i in polar_sentence(rng, n_words, ("neg", "pos")[k % 2], 5)) for k in range(30)]
    write_lines(root / "test.eng.tsv", eng_test)

    config = {
        "seed": 7,
        "out_dir": "out",
        "english": {"lang": "eng", "embeddings": "eng.vec"},
        "pivot": {"lang": "fin", "embeddings": "fin.vec", "align_lexicon": "fin-eng.tsv"},
        "languages": [
            {"lang": "kpv", "corpus": "kpv.corpus.txt",
             "lexicon": {"base": "kpv.base.tsv", "predicted": "kpv.pred.tsv"}},
            {"lang": "mdf", "lexicon": {"base": "mdf.base.tsv", "predicted": "mdf.pred.tsv"}},
        ],
        "sts": "sts.tsv",
        "sentiment": [{"path": "sst.tsv", "kind": "labeled"}, {"path": "reviews.tsv", "kind": "rating", "cap": 100}],
        "test": {"manifest": "test.json", "labels": "test.labels.tsv", "source_lang": "fin",
                 "english_labeled": "test.eng.tsv"},
        "params": {
            "pca_dim": dim,
            "sgns": {"epochs": 1, "window": 2},
            "align_pivot": {"refinement_iterations": 2},
            "align_low": {"refinement_iterations": 1},
            "encoder": {"init": encoder_init, "hidden": dim, "epochs": 2},
            "classifier": {"hidden": 64, "epochs": 3, "learning_rate": 0.05},
        },
    }
    path = root / "pipeline.json"
    path.write_text(json.dumps(config, indent=2))
    return path


def zero_shot_world(sigma, dim=100, n_words=1000, n_dict=500, seed=0):
    """Language A = latent, language B = latent @ Q + noise; returns a dict of parts."""
    rng = np.random.default_rng(seed)
    latent = polar_latent(n_words, dim, rng, strength=0.6)
    q = random_orthogonal(dim, rng)
    b = latent @ q + sigma * rng.normal(size=(n_words, dim))
    return {
        "a": EmbeddingTable([f"a{i}" for i in range(n_words)], latent, lang="aa"),
        "b_raw": EmbeddingTable([f"r{i}" for i in range(n_words)], b, lang="rr"),
        "q": q,
        "dict_rows": rng.permutation(n_words)[:n_dict],
        "rng": rng,
        "n_words": n_words,
    }
