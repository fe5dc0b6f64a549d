"""Config-driven pipeline stages with hashed run manifests.

Each stage reads files, writes its artifacts atomically under
``<out_dir>/<stage>/`` and records a ``manifest.json`` holding the sha256 of
every input and output, the resolved config and the seed. A stage is skipped
when its manifest still matches the config, its inputs and its outputs.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from xlsent import align as al
from xlsent import corpus_eval as ce
from xlsent import embed_store as es
from xlsent import finetune as ft
from xlsent import lexicon as lx
from xlsent import plotting
from xlsent import sent_encoder as se
from xlsent import sentiment as sn
from xlsent import transfer as tr
from xlsent._io import atomic_write_json, atomic_write_text, read_json, sha256_file
from xlsent.neural import TrainSpec, load_net, save_net

logger = logging.getLogger(__name__)

STAGES = (
    "convert", "pca", "clone", "finetune", "align", "eval-align",
    "train-encoder", "train-classifier", "predict", "evaluate", "stats",
)

DEFAULT_PARAMS = {
    "normalize": "l2",
    "pca_dim": 100,
    "test_fraction": 0.2,
    "skip_multiword": True,
    "negation_remap": [list(p) for p in lx.DEFAULT_NEGATION_REMAP],
    "sgns": {},
    "align_pivot": {"refinement_iterations": 20},
    "align_low": {"refinement_iterations": 5},
    "eval_k": [1, 5, 10],
    "retrieval": "csls",
    "encoder": {"init": "random", "hidden": 100, "activation": "tanh",
                "epochs": 10, "batch_size": 32, "learning_rate": 0.01},
    "classifier": {"hidden": 300, "dropout": 0.5, "activation": "relu",
                   "epochs": 3, "batch_size": 32, "learning_rate": 0.01},
}


class ConfigError(ValueError):
    pass


def _merge(defaults, overrides):
    out = copy.deepcopy(defaults)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def derive_seed(seed, *names) -> int:
    digest = hashlib.sha256(":".join([str(seed), *map(str, names)]).encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path
    seed: int
    out_dir: Path

    @classmethod
    def load(cls, path, seed=None, out_dir=None):
        path = Path(path)
        try:
            raw = read_json(path)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(raw, path.parent, seed, out_dir)

    @classmethod
    def from_dict(cls, raw, base_dir=".", seed=None, out_dir=None):
        if not isinstance(raw, dict) or not raw:
            raise ConfigError("config is empty")
        base_dir = Path(base_dir).resolve()
        seed = raw.get("seed", 0) if seed is None else seed
        out = out_dir if out_dir is not None else raw.get("out_dir")
        if out is None:
            raise ConfigError("config needs an 'out_dir' (or --out-dir)")
        out = Path(out)
        if not out.is_absolute():
            out = (base_dir / out) if out_dir is None else out.resolve()
        return cls(raw, base_dir, int(seed), out)

    @property
    def params(self):
        return _merge(DEFAULT_PARAMS, self.raw.get("params"))

    def section(self, *keys):
        node = self.raw
        for key in keys:
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"config is missing '{'.'.join(keys)}'")
            node = node[key]
        return node

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def english(self):
        return self.section("english", "lang") if "lang" in self.raw.get("english", {}) else "eng"

    @property
    def pivot(self):
        return self.section("pivot", "lang") if "lang" in self.raw.get("pivot", {}) else "fin"

    @property
    def languages(self):
        langs = self.raw.get("languages", [])
        if not isinstance(langs, list):
            raise ConfigError("'languages' must be a list")
        for entry in langs:
            if "lang" not in entry:
                raise ConfigError("every entry under 'languages' needs a 'lang'")
        return langs

    def fingerprint(self):
        data = {"config": {k: v for k, v in self.raw.items() if k != "out_dir"}, "seed": self.seed,
                "base_dir": str(self.base_dir)}
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# helpers


def _normalize(table, mode):
    return table if mode in (None, "none") else es.normalize(table, mode)


def _lexicon_spec(spec):
    if isinstance(spec, str):
        return spec, "xml" if spec.endswith(".xml") else "tsv"
    return spec["path"], spec.get("format", "xml" if spec["path"].endswith(".xml") else "tsv")


def _train_spec(section, loss, seed):
    return TrainSpec(loss, int(section["epochs"]), int(section["batch_size"]), float(section["learning_rate"]), seed)


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.cfg = config
        self.out = config.out_dir

    # paths ---------------------------------------------------------------

    def d(self, stage):
        return self.out / stage

    def table_path(self, lang):
        if lang == self.cfg.english:
            return self.d("pca") / f"{lang}.vec"
        return self.d("finetune") / f"{lang}.vec"

    def map_prefix(self, src, tgt):
        return self.d("align") / f"{src}-{tgt}"

    def _map_files(self, src, tgt):
        p = self.map_prefix(src, tgt)
        return [p.with_name(p.name + ".matrix.txt"), p.with_name(p.name + ".json")]

    def _net_files(self, prefix, n_layers):
        files = [prefix.with_name(prefix.name + ".json")]
        for i in range(n_layers):
            files += [prefix.with_name(f"{prefix.name}.layer{i}.weights.txt"),
                      prefix.with_name(f"{prefix.name}.layer{i}.bias.txt")]
        return files

    def _low_langs(self):
        return [entry["lang"] for entry in self.cfg.languages]

    def _test_languages(self):
        manifest = self.cfg.resolve(self.cfg.section("test", "manifest"))
        langs = list(read_json(manifest)["languages"])
        if self.cfg.raw["test"].get("english_labeled") and self.cfg.english not in langs:
            langs.append(self.cfg.english)
        return langs

    def _test_files(self):
        test = self.cfg.section("test")
        manifest = self.cfg.resolve(test["manifest"])
        files = [manifest, self.cfg.resolve(test["labels"])]
        meta = read_json(manifest)
        for lang in meta["languages"]:
            p = Path(meta["files"][lang])
            files.append(p if p.is_absolute() else manifest.parent / p)
        if test.get("english_labeled"):
            files.append(self.cfg.resolve(test["english_labeled"]))
        return files

    # stage inputs ----------------------------------------------------------

    def inputs(self, stage) -> list[Path]:
        cfg = self.cfg
        eng, piv, low = cfg.english, cfg.pivot, self._low_langs()
        if stage == "convert":
            return [cfg.resolve(cfg.section("english", "embeddings")), cfg.resolve(cfg.section("pivot", "embeddings"))]
        if stage == "pca":
            return [self.d("convert") / f"{eng}.vec"]
        if stage == "clone":
            files = [self.d("convert") / f"{piv}.vec"]
            for entry in cfg.languages:
                lex = entry.get("lexicon") or {}
                if "base" not in lex:
                    raise ConfigError(f"language {entry['lang']!r} needs lexicon.base")
                files.append(cfg.resolve(_lexicon_spec(lex["base"])[0]))
                if lex.get("predicted"):
                    files.append(cfg.resolve(_lexicon_spec(lex["predicted"])[0]))
            return files
        if stage == "finetune":
            files = [self.d("convert") / f"{piv}.vec"] + [self.d("clone") / f"{l}.vec" for l in low]
            if cfg.raw["pivot"].get("corpus"):
                files.append(cfg.resolve(cfg.raw["pivot"]["corpus"]))
            files += [cfg.resolve(e["corpus"]) for e in cfg.languages if e.get("corpus")]
            return files
        if stage == "align":
            files = [self.table_path(eng), self.table_path(piv)]
            files += [self.table_path(l) for l in low] + [self.d("clone") / f"{l}.lexicon.tsv" for l in low]
            specs = cfg.section("pivot", "align_lexicon")
            specs = specs if isinstance(specs, list) else [specs]
            files += [cfg.resolve(_lexicon_spec(s)[0]) for s in specs]
            return files
        if stage == "eval-align":
            files = [self.table_path(eng), self.table_path(piv)] + [self.table_path(l) for l in low]
            for src, tgt in [(piv, eng)] + [(l, piv) for l in low]:
                files += self._map_files(src, tgt) + [self.d("align") / f"{src}-{tgt}.test.tsv"]
            return files
        if stage == "train-encoder":
            files = [self.table_path(eng)]
            if cfg.raw.get("sts"):
                files.append(cfg.resolve(cfg.raw["sts"]))
            return files
        if stage == "train-classifier":
            files = [self.table_path(eng)] + self._net_files(self.d("train-encoder") / "encoder", 2)
            for src in cfg.section("sentiment"):
                files.append(cfg.resolve(src["path"] if isinstance(src, dict) else src))
            return files
        if stage == "predict":
            files = self._net_files(self.d("train-encoder") / "encoder", 2)
            files += self._net_files(self.d("train-classifier") / "classifier", 3)
            files += self._test_files()
            for lang in self._test_languages():
                files.append(self.table_path(lang))
                if lang != eng:
                    files += self._map_files(lang, eng)
            return files
        if stage == "evaluate":
            files = []
            for lang in self._test_languages():
                files += [self.d("predict") / f"{lang}.jsonl", self.d("predict") / f"{lang}.gold.txt"]
            return files
        if stage == "stats":
            return self._test_files()[:1] + self._test_files()[2:]
        raise ValueError(f"unknown stage {stage!r}")

    # stage bodies ----------------------------------------------------------

    def run_convert(self):
        cfg, out = self.cfg, self.d("convert")
        report = {}
        written = []
        for lang, key in ((cfg.english, "english"), (cfg.pivot, "pivot")):
            table, rep = es.load_text_format(cfg.resolve(cfg.section(key, "embeddings")), lang=lang, return_report=True)
            path = out / f"{lang}.vec"
            es.save_text_format(table, path)
            report[lang] = {"rows": len(table), "dim": table.dim, "duplicates": rep.duplicates,
                            "declared_count": rep.declared_count}
            written.append(path)
        atomic_write_json(out / "report.json", report)
        return written + [out / "report.json"]

    def run_pca(self):
        params, out, eng = self.cfg.params, self.d("pca"), self.cfg.english
        table = es.load_text_format(self.d("convert") / f"{eng}.vec", lang=eng)
        target = params["pca_dim"]
        written = []
        report = {"d_in": table.dim}
        if target:
            model = tr.pca_fit(table, int(target))
            table = tr.pca_apply(model, table)
            tr.save_pca(model, out / "pca")
            written += [out / "pca.components.txt", out / "pca.json"]
            report["explained_variance_total"] = float(model.explained_variance.sum())
        table = _normalize(table, params["normalize"])
        report["d_out"] = table.dim
        es.save_text_format(table, out / f"{eng}.vec")
        atomic_write_json(out / "report.json", report)
        return written + [out / f"{eng}.vec", out / "report.json"]

    def run_clone(self):
        cfg, out, piv = self.cfg, self.d("clone"), self.cfg.pivot
        pivot = es.load_text_format(self.d("convert") / f"{piv}.vec", lang=piv)
        report = {}
        written = []
        for entry in cfg.languages:
            lang = entry["lang"]
            lex_cfg = entry["lexicon"]
            path, fmt = _lexicon_spec(lex_cfg["base"])
            base = lx.load_pairs(cfg.resolve(path), fmt, source_lang=lang, target_lang=piv)
            lexicon = base
            if lex_cfg.get("predicted"):
                path, fmt = _lexicon_spec(lex_cfg["predicted"])
                predicted = lx.load_pairs(cfg.resolve(path), fmt, source_lang=lang, target_lang=piv,
                                          provenance=lx.PREDICTED)
                lexicon = lx.merge(base, predicted)
            table, clone_rep = tr.clone_via_lexicon(pivot, lexicon.invert(), cfg.params["skip_multiword"])
            es.save_text_format(table, out / f"{lang}.vec")
            lx.save_pairs(lexicon, out / f"{lang}.lexicon.tsv")
            report[lang] = {"lexicon": lexicon.counts(), "coverage": clone_rep.to_dict()}
            written += [out / f"{lang}.vec", out / f"{lang}.lexicon.tsv"]
        atomic_write_json(out / "report.json", report)
        return written + [out / "report.json"]

    def run_finetune(self):
        cfg, out, params = self.cfg, self.d("finetune"), self.cfg.params
        piv = cfg.pivot
        jobs = [(piv, self.d("convert") / f"{piv}.vec", cfg.raw["pivot"].get("corpus"))]
        jobs += [(e["lang"], self.d("clone") / f"{e['lang']}.vec", e.get("corpus")) for e in cfg.languages]
        report, traces, written = {}, {}, []
        for lang, src, corpus_path in jobs:
            table = es.load_text_format(src, lang=lang)
            entry = {"added": 0, "rejected": 0, "epochs": 0, "final_loss": None}
            if corpus_path:
                sgns = ft.SgnsConfig(**{"seed": derive_seed(cfg.seed, "sgns", lang), **params["sgns"]})
                corpus = ft.load_corpus(cfg.resolve(corpus_path), lang)
                table, exp = ft.expand_vocabulary(table, corpus, sgns.min_count, derive_seed(cfg.seed, "expand", lang))
                table, trace = ft.finetune_sgns(table, corpus, sgns)
                entry = {"added": exp.added, "rejected": exp.rejected_below_min_count, "epochs": sgns.epochs,
                         "final_loss": trace[-1] if trace else None, "loss_trace": trace}
                traces[lang] = trace
            table = _normalize(table, params["normalize"])
            entry["vocab"] = len(table)
            es.save_text_format(table, out / f"{lang}.vec")
            report[lang] = entry
            written.append(out / f"{lang}.vec")
        atomic_write_json(out / "report.json", report)
        plotting.plot_loss_traces(traces, out / "loss.png", "mean SGNS loss")
        return written + [out / "report.json", out / "loss.png"]

    def _align_config(self, key, name):
        section = dict(self.cfg.params[key])
        section.setdefault("seed", derive_seed(self.cfg.seed, "align", name))
        section.setdefault("retrieval", self.cfg.params["retrieval"])
        return al.AlignConfig(**section)

    def run_align(self):
        cfg, out, params = self.cfg, self.d("align"), self.cfg.params
        eng, piv = cfg.english, cfg.pivot
        tables = {lang: es.load_text_format(self.table_path(lang), lang=lang)
                  for lang in [eng, piv] + self._low_langs()}
        specs = cfg.section("pivot", "align_lexicon")
        specs = specs if isinstance(specs, list) else [specs]
        pivot_lex = None
        for spec in specs:
            path, fmt = _lexicon_spec(spec)
            lex = lx.load_pairs(cfg.resolve(path), fmt, source_lang=piv, target_lang=eng)
            pivot_lex = lex if pivot_lex is None else lx.merge(pivot_lex, lex)
        jobs = [(piv, eng, pivot_lex, "align_pivot")]
        for lang in self._low_langs():
            lex = lx.load_pairs(self.d("clone") / f"{lang}.lexicon.tsv", "tsv", source_lang=lang, target_lang=piv)
            jobs.append((lang, piv, lex, "align_low"))

        report, traces, written, maps = {}, {}, [], {}
        for src, tgt, lex, key in jobs:
            name = f"{src}-{tgt}"
            acfg = self._align_config(key, name)
            train, test = lx.split_train_test(lex, params["test_fraction"], acfg.seed)
            if src == piv:
                train = train.with_pairs(cfg.raw["pivot"].get("extra_align_pairs", []))
            resolved = al.resolve_pairs(tables[src], tables[tgt], train)
            m = al.procrustes_fit(tables[src], tables[tgt], train)
            m, trace = al.refine(m, tables[src], tables[tgt], acfg)
            maps[(src, tgt)] = m
            al.save_map(m, self.map_prefix(src, tgt))
            lx.save_pairs(train, out / f"{name}.train.tsv")
            lx.save_pairs(test, out / f"{name}.test.tsv")
            written += self._map_files(src, tgt) + [out / f"{name}.train.tsv", out / f"{name}.test.tsv"]
            report[name] = {"train_pairs": len(train), "test_pairs": len(test), "seed": acfg.seed,
                            "resolved_train_pairs": int(len(resolved.source_rows)), "dropped_train_pairs": resolved.dropped,
                            "refinement_iterations": acfg.refinement_iterations, "induced_sizes": trace.sizes,
                            "stopped_early": trace.stopped_early, "orthogonality_error": m.orthogonality_error(),
                            **lex.counts()}
            traces[name] = trace.sizes
        for lang in self._low_langs():
            m = al.compose(maps[(lang, piv)], maps[(piv, eng)])
            al.save_map(m, self.map_prefix(lang, eng))
            written += self._map_files(lang, eng)
        atomic_write_json(out / "report.json", report)
        plotting.plot_refine_traces(traces, out / "refine.png")
        return written + [out / "report.json", out / "refine.png"]

    def run_eval_align(self):
        cfg, out, params = self.cfg, self.d("eval-align"), self.cfg.params
        eng, piv = cfg.english, cfg.pivot
        metrics, lines = {}, ["pair\tk\tp_at_k\tpairs_evaluated\tpairs_dropped"]
        for src, tgt in [(piv, eng)] + [(l, piv) for l in self._low_langs()]:
            name = f"{src}-{tgt}"
            source = es.load_text_format(self.table_path(src), lang=src)
            target = es.load_text_format(self.table_path(tgt), lang=tgt)
            test = lx.load_pairs(self.d("align") / f"{name}.test.tsv", "tsv", source_lang=src, target_lang=tgt)
            res = al.evaluate_translation(al.load_map(self.map_prefix(src, tgt)), source, target, test,
                                          params["eval_k"], params["retrieval"])
            metrics[name] = res.to_dict()
            for k, v in res.p_at.items():
                lines.append(f"{name}\t{k}\t{v:.6f}\t{res.pairs_evaluated}\t{res.pairs_dropped}")
        atomic_write_json(out / "metrics.json", metrics)
        atomic_write_text(out / "metrics.tsv", "\n".join(lines) + "\n")
        plotting.plot_p_at_k({n: m["p_at"] for n, m in metrics.items()}, out / "p_at_k.png")
        return [out / "metrics.json", out / "metrics.tsv", out / "p_at_k.png"]

    def run_train_encoder(self):
        cfg, out = self.cfg, self.d("train-encoder")
        ecfg = cfg.params["encoder"]
        table = es.load_text_format(self.table_path(cfg.english), lang=cfg.english)
        seed = derive_seed(cfg.seed, "encoder")
        if ecfg["init"] == "identity":
            encoder = se.identity_encoder(table.dim)
        elif ecfg["init"] == "random":
            encoder = se.new_encoder(table.dim, int(ecfg["hidden"]), table.dim, ecfg["activation"], seed)
        else:
            raise ConfigError(f"unknown encoder init {ecfg['init']!r}")
        report = {"init": ecfg["init"], "loss_trace": [], "pairs_used": 0, "pairs_skipped": 0}
        if int(ecfg["epochs"]) > 0:
            if not cfg.raw.get("sts"):
                raise ConfigError("encoder epochs > 0 need an 'sts' file")
            remap = [tuple(p) for p in cfg.params["negation_remap"]]
            pairs = [se.ScoredSentencePair(lx.apply_negation_remap(p.tokens_a, remap),
                                           lx.apply_negation_remap(p.tokens_b, remap), p.gold_score)
                     for p in se.load_sts(cfg.resolve(cfg.raw["sts"]), remap=False)]
            encoder, sts = se.train_sts(encoder, table, pairs, _train_spec(ecfg, "mse_of_cosine", seed))
            report.update(loss_trace=sts.loss_trace, pairs_used=sts.pairs_used, pairs_skipped=sts.pairs_skipped)
        written = save_net(encoder.tail, out / "encoder")
        atomic_write_json(out / "report.json", report)
        plotting.plot_loss_traces({"sts": report["loss_trace"]}, out / "loss.png", "cosine MSE")
        return written + [out / "report.json", out / "loss.png"]

    def run_train_classifier(self):
        cfg, out = self.cfg, self.d("train-classifier")
        ccfg = cfg.params["classifier"]
        eng = cfg.english
        table = es.load_text_format(self.table_path(eng), lang=eng)
        encoder = se.load_encoder(self.d("train-encoder") / "encoder")
        remap = [tuple(p) for p in cfg.params["negation_remap"]]
        sources, caps = [], []
        for src in cfg.section("sentiment"):
            src = {"path": src} if isinstance(src, str) else src
            path = cfg.resolve(src["path"])
            kind = src.get("kind", "labeled")
            if kind == "labeled":
                data = sn.load_labeled(path, eng, remap=False)
            elif kind == "rating":
                data = sn.load_rated(path, eng, remap=False, neg_max=src.get("neg_max", 2), pos_min=src.get("pos_min", 4))
            else:
                raise ConfigError(f"unknown sentiment source kind {kind!r}")
            sources.append([sn.LabeledSentence(lx.apply_negation_remap(s.tokens, remap), s.label, eng) for s in data])
            caps.append(src.get("cap"))
        seed = derive_seed(cfg.seed, "classifier")
        data = sn.mix_sources(sources, caps, seed)
        net = sn.build_classifier(encoder.out_dim, int(ccfg["hidden"]), float(ccfg["dropout"]), ccfg["activation"], seed)
        model, rep = sn.train_classifier(encoder, table, data, _train_spec(ccfg, "softmax_cross_entropy", seed), net)
        written = save_net(model.classifier, out / "classifier")
        atomic_write_json(out / "report.json", {**rep.to_dict(), "encoder_ref": model.encoder_ref})
        plotting.plot_loss_traces({"train": rep.loss_trace}, out / "loss.png", "cross-entropy")
        return written + [out / "report.json", out / "loss.png"]

    def run_predict(self):
        cfg, out = self.cfg, self.d("predict")
        eng = cfg.english
        test = cfg.section("test")
        encoder = se.load_encoder(self.d("train-encoder") / "encoder")
        model = sn.SentimentModel(load_net(self.d("train-classifier") / "classifier"), sn.encoder_id(encoder))
        remap = [tuple(p) for p in cfg.params["negation_remap"]]
        corpus = ce.load_parallel(cfg.resolve(test["manifest"]))
        labels = ce.load_index_labels(cfg.resolve(test["labels"]))
        sets = ce.project_labels(corpus, labels, test.get("source_lang", cfg.pivot))
        if test.get("english_labeled"):
            sets[eng] = sn.load_labeled(cfg.resolve(test["english_labeled"]), eng, remap=False)
        written = []
        for lang in self._test_languages():
            table = es.load_text_format(self.table_path(lang), lang=lang)
            m = None if lang == eng else al.load_map(self.map_prefix(lang, eng))
            rows, gold = [], []
            for s in sets[lang]:
                tokens = lx.apply_negation_remap(s.tokens, remap)
                pred = sn.predict(model, encoder, table, m, tokens)
                rows.append(json.dumps(pred.to_dict(tokens), ensure_ascii=False, sort_keys=True))
                gold.append(s.label)
            atomic_write_text(out / f"{lang}.jsonl", "".join(r + "\n" for r in rows))
            atomic_write_text(out / f"{lang}.gold.txt", "".join(g + "\n" for g in gold))
            written += [out / f"{lang}.jsonl", out / f"{lang}.gold.txt"]
        return written

    def run_evaluate(self):
        out = self.d("evaluate")
        reports = {}
        for lang in self._test_languages():
            preds = read_labels(self.d("predict") / f"{lang}.jsonl")
            gold = read_labels(self.d("predict") / f"{lang}.gold.txt")
            reports[lang] = ce.evaluate(preds, gold)
        return write_eval_outputs(reports, out)

    def run_stats(self):
        out = self.d("stats")
        corpus = ce.load_parallel(self.cfg.resolve(self.cfg.section("test", "manifest")))
        stats = ce.corpus_stats(corpus)
        atomic_write_json(out / "stats.json", stats)
        lines = ["language\ttokens\tsentences"] + [f"{l}\t{s['tokens']}\t{s['sentences']}" for l, s in stats.items()]
        atomic_write_text(out / "stats.tsv", "\n".join(lines) + "\n")
        return [out / "stats.json", out / "stats.tsv"]

    # orchestration --------------------------------------------------------

    def manifest_path(self, stage):
        return self.d(stage) / "manifest.json"

    def is_fresh(self, stage, inputs=None) -> bool:
        path = self.manifest_path(stage)
        if not path.exists():
            return False
        try:
            man = read_json(path)
        except (json.JSONDecodeError, OSError):
            return False
        if man.get("fingerprint") != self.cfg.fingerprint():
            return False
        inputs = self.inputs(stage) if inputs is None else inputs
        recorded = man.get("inputs", {})
        if sorted(recorded) != sorted(str(p) for p in inputs):
            return False
        for p in inputs:
            if not p.exists() or sha256_file(p) != recorded[str(p)]:
                return False
        for rel, digest in man.get("outputs", {}).items():
            p = self.out / rel
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def run_stage(self, stage, force=False) -> bool:
        """Run one stage; returns False when it was skipped as up to date."""
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        inputs = self.inputs(stage)
        missing = [p for p in inputs if not p.exists()]
        if missing:
            raise FileNotFoundError(f"stage {stage}: missing input {missing[0]}")
        if not force and self.is_fresh(stage, inputs):
            logger.info("stage %s: up to date, skipped", stage)
            return False
        logger.info("stage %s: running", stage)
        input_hashes = {str(p): sha256_file(p) for p in inputs}
        outputs = getattr(self, "run_" + stage.replace("-", "_"))()
        manifest = {
            "stage": stage,
            "seed": self.cfg.seed,
            "fingerprint": self.cfg.fingerprint(),
            "config": self.cfg.raw,
            "params": self.cfg.params,
            "inputs": input_hashes,
            "outputs": {str(Path(p).relative_to(self.out)): sha256_file(p) for p in outputs},
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        atomic_write_json(self.manifest_path(stage), manifest)
        return True

    def validate(self):
        for stage in STAGES:
            self.inputs(stage)
        for key in ("english", "pivot", "sentiment", "test"):
            self.cfg.section(key)

    def run_all(self, force=False) -> dict:
        self.validate()
        return {stage: self.run_stage(stage, force) for stage in STAGES}


def read_labels(path) -> list[str]:
    """Labels from a plain one-per-line file or from JSON lines with a 'label' key."""
    labels = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            labels.append(json.loads(line)["label"] if line.startswith("{") else line)
    return labels


def write_eval_outputs(reports: dict, out: Path) -> list[Path]:
    out = Path(out)
    atomic_write_json(out / "report.json", {lang: r.to_dict() for lang, r in reports.items()})
    atomic_write_text(out / "table.txt", ce.format_table(reports))
    atomic_write_text(out / "metrics.tsv", ce.format_tsv(reports))
    plotting.plot_confusions(reports, out / "confusion.png")
    plotting.plot_accuracy(reports, out / "accuracy.png")
    return [out / n for n in ("report.json", "table.txt", "metrics.tsv", "confusion.png", "accuracy.png")]
