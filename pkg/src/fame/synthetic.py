"""Seeded synthetic log corpus with planted failure domains.

The generator is its own oracle: every line carries its true label, domain
and template in a sidecar file.

* Universal templates are normal-only and Zipf-weighted.
* Pure templates are anomaly-only.  Domain 0 holds only pure templates; every
  other domain gets one pure template plus a round-robin share of the mixed
  templates.
* Mixed templates host both classes.  The parameter after ``state`` decides
  the label, and which values are anomalous flips between odd and even
  domains, so no single linear model over the words can get every domain
  right while a per-domain model can.
* Optional novel anomaly templates appear only after the offline cut.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ANOMALY, NORMAL, Corpus

VALUES = ("amber", "cobalt", "indigo", "scarlet")
ODD_ANOMALOUS = frozenset({"indigo", "scarlet"})
EVEN_ANOMALOUS = frozenset({"amber", "cobalt"})

DOMAIN_SPECS = [
    ("MEMORY_ECC_FAILURE", "MEMFAIL", "ddr ecc dimm parity scrub rank bank correctable chipkill refresh"),
    ("NETWORK_LINK_FAILURE", "LINKFAIL", "torus fabric lane retrain sender receiver crossbar serdes uplink hop"),
    ("STORAGE_IO_FAILURE", "IOFAIL", "lustre ost raid sector journal volume inode mount stripe extent"),
    ("KERNEL_PANIC", "KPANIC", "kernel panic oops trap stack syscall interrupt scheduler vmalloc softirq"),
    ("POWER_THERMAL_FAILURE", "PWRFAIL", "psu voltage fan thermal rail regulator sensor bmc throttle airflow"),
    ("SCHEDULER_FAILURE", "SCHEDFAIL", "slurm queue prolog epilog drain allocation partition backfill reservation preempt"),
    ("FILESYSTEM_FAILURE", "FSFAIL", "ext xfs superblock metadata fsck quota orphan dentry writeback readahead"),
    ("INTERCONNECT_FAILURE", "ICFAIL", "infiniband hca subnet ibport mellanox credit flowctl linkdown portstate vlane"),
]

UNIVERSAL_VOCAB = (
    "ciod generated message job started completed instruction cache node card idoproxy mmcs "
    "server boot status ok heartbeat sync session opened closed user config reload loaded module "
    "checkpoint daemon cron login accepted connection registered service health probe listener "
    "snapshot rotated logfile flushed buffer polling agent update request handled timer expired "
    "queued worker thread pool resumed paused ready idle online backup verified"
).split()

NOVEL_VOCAB = "quarantined unrecoverable wedged poisoned desynchronized corrupted hung orphaned".split()


@dataclass
class SyntheticConfig:
    n: int = 50_000
    domains: int = 3
    mixed_templates: int = 5
    anomaly_rate: float = 0.05
    mixed_anomaly_fraction: float = 0.6
    within_template_anomaly: float = 0.3
    pure_templates_domain0: int = 3
    universal_templates: int = 40
    novel_templates: int = 0
    novel_fraction: float = 0.01  # of test-region lines
    offline_fraction: float = 0.85
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.domains <= len(DOMAIN_SPECS):
            raise ValueError(f"domains must lie in [1, {len(DOMAIN_SPECS)}]")
        if self.mixed_templates and self.domains < 2:
            raise ValueError("mixed templates need at least two domains (domain 0 is pure-only)")
        if not 0 < self.anomaly_rate < 1:
            raise ValueError("anomaly_rate must lie in (0, 1)")


@dataclass
class Template:
    tid: str
    kind: str  # universal | pure | mixed | novel
    domain: int | None
    tokens: list[str]  # "<num>" and "<value>" are filled per line
    weight: float = 1.0

    def render(self, rng: np.random.Generator, value: str | None = None) -> str:
        out = []
        for t in self.tokens:
            if t == "<num>":
                out.append(str(int(rng.integers(0, 100_000))))
            elif t == "<hex>":
                out.append(f"0x{int(rng.integers(0, 2**32)):08x}")
            elif t == "<value>":
                out.append(value)
            else:
                out.append(t)
        return " ".join(out)


@dataclass
class SyntheticCorpus:
    config: SyntheticConfig
    lines: list[str]
    labels: np.ndarray
    domains: list[str | None]  # true domain name per line (None for universal lines)
    template_ids: list[str]
    novel: np.ndarray
    templates: list[Template] = field(default_factory=list)

    @property
    def domain_names(self) -> list[str]:
        return [DOMAIN_SPECS[d][0] for d in range(self.config.domains)]

    def corpus(self) -> Corpus:
        return Corpus(self.lines, self.labels)

    def tag(self, i: int) -> str:
        if self.labels[i] == NORMAL:
            return "-"
        name = self.domains[i]
        return next(t for n, t, _ in DOMAIN_SPECS if n == name) if name else "ANOMALY"

    def write(self, path: str | Path, truth_path: str | Path | None = None) -> tuple[Path, Path]:
        path = Path(path)
        truth_path = Path(truth_path) if truth_path else path.with_name(path.name + ".truth.jsonl")
        with path.open("w", encoding="utf-8") as fh:
            for i, line in enumerate(self.lines):
                fh.write(f"{self.tag(i)} {line}\n")
        with truth_path.open("w", encoding="utf-8") as fh:
            for i in range(len(self.lines)):
                fh.write(
                    json.dumps(
                        {
                            "ordinal": i,
                            "label": int(self.labels[i]),
                            "domain": self.domains[i],
                            "template_id": self.template_ids[i],
                            "novel": bool(self.novel[i]),
                        }
                    )
                    + "\n"
                )
        return path, truth_path


def load_truth(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _anomaly_templates(cfg: SyntheticConfig) -> list[Template]:
    out: list[Template] = []
    vocab = [spec[2].split() for spec in DOMAIN_SPECS[: cfg.domains]]
    # distinct lengths inside a domain keep the parser from merging templates
    next_extra = [0] * cfg.domains

    def extra(d: int) -> list[str]:
        k = next_extra[d]
        next_extra[d] += 1
        return vocab[d][6 : 6 + k % 4] + ["<hex>"] * (k // 4)

    n_pure = {0: cfg.pure_templates_domain0}
    for d in range(1, cfg.domains):
        n_pure[d] = 1
    if cfg.mixed_templates == 0:
        n_pure = {d: max(1, cfg.pure_templates_domain0 if d == 0 else 1) for d in range(cfg.domains)}
    for d in range(cfg.domains):
        v = vocab[d]
        for j in range(n_pure[d]):
            toks = [v[0], v[1], v[2 + j % 4], "fault", "<num>", v[4], v[5], "detected"] + extra(d)
            out.append(Template(f"P{d}_{j}", "pure", d, toks))
    for m in range(cfg.mixed_templates):
        d = 1 + m % (cfg.domains - 1)
        v = vocab[d]
        toks = [v[0], v[1], v[2 + m % 4], "unit", "<num>", "state", "<value>", "flag", "<num>", v[4], v[5]] + extra(d)
        out.append(Template(f"M{d}_{m}", "mixed", d, toks))
    return out


def _universal_templates(cfg: SyntheticConfig, rng: np.random.Generator) -> list[Template]:
    out = []
    used: set[tuple[str, int]] = set()
    words = list(UNIVERSAL_VOCAB)
    i = 0
    while len(out) < cfg.universal_templates:
        length = int(rng.integers(5, 13))
        first = words[int(rng.integers(0, len(words)))]
        if (first, length) in used:
            i += 1
            if i > 10_000:
                raise ValueError("cannot build that many distinct universal templates")
            continue
        used.add((first, length))
        body = []
        for _ in range(length - 1):
            body.append("<num>" if rng.random() < 0.25 else words[int(rng.integers(0, len(words)))])
        out.append(Template(f"U{len(out)}", "universal", None, [first] + body))
    weights = 1.0 / np.arange(1, len(out) + 1)
    for t, w in zip(out, weights / weights.sum()):
        t.weight = float(w)
    return out


def _novel_templates(cfg: SyntheticConfig) -> list[Template]:
    out = []
    for j in range(cfg.novel_templates):
        d = j % cfg.domains
        v = DOMAIN_SPECS[d][2].split()
        toks = [NOVEL_VOCAB[j % len(NOVEL_VOCAB)], v[0], "<num>", "event", NOVEL_VOCAB[(j + 3) % len(NOVEL_VOCAB)]]
        toks += ["<hex>"] * (j // len(NOVEL_VOCAB))
        out.append(Template(f"N{j}", "novel", d, toks))
    return out


def generate(cfg: SyntheticConfig | None = None, **overrides) -> SyntheticCorpus:
    cfg = cfg or SyntheticConfig(**overrides)
    rng = np.random.default_rng(cfg.seed)
    anomalous = _anomaly_templates(cfg)
    universal = _universal_templates(cfg, rng)
    novel = _novel_templates(cfg)
    pure = [t for t in anomalous if t.kind == "pure"]
    mixed = [t for t in anomalous if t.kind == "mixed"]

    n_anom = int(round(cfg.anomaly_rate * cfg.n))
    if mixed:
        mixed_anom = int(round(cfg.mixed_anomaly_fraction * n_anom))
        q = cfg.within_template_anomaly
        mixed_norm = int(round(mixed_anom * (1 - q) / q))
    else:
        mixed_anom = mixed_norm = 0
    pure_anom = n_anom - mixed_anom
    n_universal = cfg.n - n_anom - mixed_norm
    if n_universal <= 0:
        raise ValueError("anomaly settings leave no room for universal lines")

    # slot = (template index into `everything`, is_anomaly)
    everything = universal + pure + mixed + novel
    index = {t.tid: i for i, t in enumerate(everything)}
    slots_t: list[np.ndarray] = []
    slots_y: list[np.ndarray] = []
    u_idx = np.array([index[t.tid] for t in universal])
    slots_t.append(rng.choice(u_idx, size=n_universal, p=[t.weight for t in universal]))
    slots_y.append(np.zeros(n_universal, dtype=np.int64))
    if pure:
        p_idx = np.array([index[t.tid] for t in pure])
        slots_t.append(p_idx[np.arange(pure_anom) % len(p_idx)])
        slots_y.append(np.ones(pure_anom, dtype=np.int64))
    if mixed:
        m_idx = np.array([index[t.tid] for t in mixed])
        slots_t.append(m_idx[np.arange(mixed_anom) % len(m_idx)])
        slots_y.append(np.ones(mixed_anom, dtype=np.int64))
        slots_t.append(m_idx[np.arange(mixed_norm) % len(m_idx)])
        slots_y.append(np.zeros(mixed_norm, dtype=np.int64))
    tmpl = np.concatenate(slots_t)
    label = np.concatenate(slots_y)
    perm = rng.permutation(len(tmpl))
    tmpl, label = tmpl[perm], label[perm]

    is_novel = np.zeros(cfg.n, dtype=bool)
    if novel:
        cut = int(np.floor(cfg.n * cfg.offline_fraction))
        test_universal = np.flatnonzero((np.arange(cfg.n) >= cut) & np.isin(tmpl, u_idx))
        k = min(len(test_universal), int(round(cfg.novel_fraction * (cfg.n - cut))))
        chosen = np.sort(rng.choice(test_universal, size=k, replace=False))
        n_idx = np.array([index[t.tid] for t in novel])
        tmpl[chosen] = n_idx[np.arange(k) % len(n_idx)]
        label[chosen] = ANOMALY
        is_novel[chosen] = True

    lines, domains, tids = [], [], []
    for t_i, y in zip(tmpl.tolist(), label.tolist()):
        t = everything[t_i]
        value = None
        if t.kind == "mixed":
            bad = ODD_ANOMALOUS if t.domain % 2 else EVEN_ANOMALOUS
            choices = sorted(bad) if y else sorted(set(VALUES) - bad)
            value = choices[int(rng.integers(0, 2))]
        lines.append(t.render(rng, value))
        domains.append(None if t.domain is None else DOMAIN_SPECS[t.domain][0])
        tids.append(t.tid)
    return SyntheticCorpus(cfg, lines, label.astype(np.int64), domains, tids, is_novel, everything)
