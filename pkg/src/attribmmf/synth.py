"""Synthetic planted-group CTI corpus.

Every group owns a pool of IOCs; reports draw most of their IOCs from their
group's pool and a ``noise_rate`` fraction from a pool shared by all groups.
The enrichment file links IPs, domains and malware inside each group pool and
gives group-pool malware group-typical (but not group-unique) families, so
both identity and attributes carry signal. An ``isolated_rate`` fraction of
reports uses freshly minted, report-private IOCs (family-less malware,
unlinked IPs and domains) in place of the group pool, so only the attributes
of their IOCs point to the group. Isolation is report-level noise: unless set
explicitly, ``isolated_rate`` follows ``noise_rate``, and a noise-free corpus
has none. IOCs are written into report text in defanged form so the regular
ingest path parses them.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigInvalid
from .ingest import default_attack_table

logger = logging.getLogger(__name__)

POOL_KINDS = ("malware", "domain", "ip", "url", "filepath", "registry", "filename", "email",
              "vulnerability", "technique", "tactic")

_SYLLABLES = ("ka", "ro", "mi", "tel", "vex", "dor", "sa", "lin", "qu", "zen", "pol", "ar", "net",
              "cor", "bit", "nox", "ul", "fen", "gra", "vo", "sec", "up", "dat", "hub")
_TLDS = ("com", "net", "org", "info", "biz", "xyz", "top", "online")
_COUNTRIES = ("RU", "CN", "KP", "IR", "VN", "US", "DE", "NL", "UA", "BR", "IN", "TR")
_CATEGORIES = ("phishing", "c2", "malware-distribution", "spam", "cryptomining", "exploit-kit",
               "botnet", "scam")
_BEH = ("downloader", "infostealer", "keylogger", "backdoor", "ransomware", "dropper")
_CLASS = ("trojan", "worm", "virus", "grayware", "rootkit")
_FILE = ("exe", "dll", "macro", "pdf", "script")
_LANGS = ("ENGLISH", "CHINESE", "RUSSIAN", "KOREAN", "NEUTRAL")
_TAGS = ("peexe", "signed", "overlay", "packed", "upx", "64bits", "persistence", "obfuscated")
_EXTS = ("exe", "dll", "ps1", "vbs", "bat", "lnk", "hta", "js")
_FRESH_KINDS = ("domain", "ip", "domain", "malware", "ip")


@dataclass
class SynthConfig:
    groups: int = 6
    reports_per_group: int = 50
    pool_sizes: Dict[str, int] = field(default_factory=lambda: {
        "malware": 10, "domain": 8, "ip": 8, "url": 6, "filepath": 5, "registry": 4,
        "filename": 4, "email": 2, "vulnerability": 2, "technique": 6, "tactic": 2,
    })
    shared_pool_size: int = 30
    noise_rate: float = 0.2
    iocs_per_report: Tuple[int, int] = (8, 14)
    resolution_density: float = 0.3
    assoc_density: float = 0.25
    homology_density: float = 0.6
    attribute_typicality: float = 0.9
    isolated_rate: Optional[float] = None
    seed: int = 0

    def validate(self) -> None:
        if self.groups < 1 or self.reports_per_group < 1:
            raise ConfigInvalid("groups and reports_per_group must be positive")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigInvalid(f"noise_rate {self.noise_rate} outside [0, 1]")
        for name in ("resolution_density", "assoc_density", "homology_density", "attribute_typicality",
                     "isolated_rate"):
            v = getattr(self, name)
            if v is None:
                continue
            if not 0.0 <= v <= 1.0:
                raise ConfigInvalid(f"{name} {v} outside [0, 1]")
        unknown = set(self.pool_sizes) - set(POOL_KINDS)
        if unknown:
            raise ConfigInvalid(f"unknown pool kinds {sorted(unknown)}")
        if any(v < 0 for v in self.pool_sizes.values()) or self.shared_pool_size < 0:
            raise ConfigInvalid("pool sizes must be nonnegative")
        lo, hi = self.iocs_per_report
        if lo < 1 or hi < lo:
            raise ConfigInvalid(f"iocs_per_report {self.iocs_per_report} is not a valid range")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown synth keys {sorted(unknown)}")
        kw = dict(data)
        if "pool_sizes" in kw:
            merged = cls().pool_sizes
            merged.update(kw["pool_sizes"])
            kw["pool_sizes"] = merged
        if "iocs_per_report" in kw:
            kw["iocs_per_report"] = tuple(kw["iocs_per_report"])
        cfg = cls(**kw)
        cfg.validate()
        return cfg


class _Gen:
    """Seeded generators for syntactically valid IOC values, unique per run."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used = set()

    def _unique(self, make):
        while True:
            v = make()
            if v not in self.used:
                self.used.add(v)
                return v

    def word(self, n=(2, 3)) -> str:
        k = int(self.rng.integers(n[0], n[1] + 1))
        return "".join(self.rng.choice(_SYLLABLES, size=k))

    def malware(self) -> str:
        return self._unique(lambda: self.rng.bytes(32).hex())

    def domain(self) -> str:
        return self._unique(lambda: f"{self.word()}-{self.word((1, 2))}.{self.rng.choice(_TLDS)}")

    def ip(self) -> str:
        def make():
            first = int(self.rng.choice([23, 31, 37, 45, 62, 77, 85, 91, 103, 141, 176, 185, 193, 212]))
            rest = self.rng.integers(1, 255, size=3)
            return f"{first}.{rest[0]}.{rest[1]}.{rest[2]}"
        return self._unique(make)

    def url(self) -> str:
        return self._unique(lambda: f"http://{self.word()}.{self.rng.choice(_TLDS)}/{self.word()}/{self.word()}.php")

    def filepath(self) -> str:
        base = self.rng.choice(["C:\\Users\\Public", "C:\\ProgramData", "C:\\Windows\\Temp",
                                "%APPDATA%\\Microsoft"])
        return self._unique(lambda: f"{base}\\{self.word()}\\{self.word()}.{self.rng.choice(_EXTS)}")

    def registry(self) -> str:
        base = self.rng.choice(["HKCU\\Software\\Microsoft\\Windows\\CurrentVersion\\Run",
                                "HKLM\\SOFTWARE\\Microsoft\\Windows\\CurrentVersion\\Policies",
                                "HKCU\\Software\\Classes"])
        return self._unique(lambda: f"{base}\\{self.word()}")

    def filename(self) -> str:
        return self._unique(lambda: f"{self.word()}_{self.word((1, 1))}.{self.rng.choice(_EXTS)}")

    def email(self) -> str:
        return self._unique(lambda: f"{self.word()}.{self.word((1, 2))}@{self.word()}.{self.rng.choice(_TLDS)}")

    def vulnerability(self) -> str:
        return self._unique(lambda: f"CVE-{int(self.rng.integers(2014, 2024))}-{int(self.rng.integers(1000, 40000))}")


def _defang(kind: str, value: str) -> str:
    if kind == "url":
        return value.replace("http://", "hxxp://").replace(".", "[.]")
    if kind in ("domain", "ip"):
        return value.replace(".", "[.]")
    if kind == "email":
        return value.replace("@", "[@]").replace(".", "[.]")
    return value


def generate_synthetic(cfg: SynthConfig) -> Tuple[List[dict], dict]:
    """Return (report records, enrichment document) for ``cfg``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    gen = _Gen(rng)
    table = default_attack_table()
    techniques = sorted(e.id for e in table.entries.values() if e.id.startswith("T") and not e.id.startswith("TA"))
    tactics = sorted(e.id for e in table.entries.values() if e.id.startswith("TA"))
    tech_perm = list(rng.permutation(techniques))
    tac_perm = list(rng.permutation(tactics))

    def draw(kind: str, n: int, cursor: Dict[str, int]) -> List[str]:
        if kind == "technique":
            out = [tech_perm[(cursor.setdefault(kind, 0) + i) % len(tech_perm)] for i in range(n)]
            cursor[kind] += n
            return out
        if kind == "tactic":
            out = [tac_perm[(cursor.setdefault(kind, 0) + i) % len(tac_perm)] for i in range(n)]
            cursor[kind] += n
            return out
        return [getattr(gen, kind)() for _ in range(n)]

    cursor: Dict[str, int] = {}
    group_names = [f"APT-{g + 1:02d}" for g in range(cfg.groups)]
    pools: List[Dict[str, List[str]]] = []
    for _ in range(cfg.groups):
        pools.append({k: draw(k, cfg.pool_sizes.get(k, 0), cursor) for k in POOL_KINDS})
    shared_kinds = ("malware", "domain", "ip", "url", "filename", "technique")
    shared: Dict[str, List[str]] = {k: [] for k in POOL_KINDS}
    for i in range(cfg.shared_pool_size):
        kind = shared_kinds[i % len(shared_kinds)]
        shared[kind] += draw(kind, 1, cursor)

    families = [f"fam{g + 1:02d}" for g in range(cfg.groups)]
    country = {g: _COUNTRIES[g % len(_COUNTRIES)] for g in range(cfg.groups)}
    category = {g: _CATEGORIES[g % len(_CATEGORIES)] for g in range(cfg.groups)}
    enrichment: Dict[str, Dict[str, dict]] = {"malware": {}, "ip": {}, "domain": {}, "url": {}, "vulnerability": {}}

    profiles = [{
        "avclass_BEH": str(rng.choice(_BEH)),
        "avclass_CLASS": str(rng.choice(_CLASS)),
        "avclass_FILE": str(rng.choice(_FILE)),
        "pe_resource": f"RT_{rng.choice(['ICON', 'VERSION', 'MANIFEST', 'RCDATA'])}",
        "pe_resource_lang": str(rng.choice(_LANGS)),
        "tags": sorted(set(rng.choice(_TAGS, size=2).tolist())),
    } for _ in range(cfg.groups)]

    def malware_record(g: int) -> dict:
        if g >= 0 and rng.random() < cfg.homology_density:
            fam = families[g] if rng.random() < 0.5 else families[(g + 1) % cfg.groups]
        else:
            fam = families[int(rng.integers(cfg.groups))]
        rec = {
            "avclass_BEH": str(rng.choice(_BEH)),
            "avclass_CLASS": str(rng.choice(_CLASS)),
            "avclass_FAM": fam,
            "avclass_FILE": str(rng.choice(_FILE)),
            "imphash": rng.bytes(16).hex(),
            "pe_resource": f"RT_{rng.choice(['ICON', 'VERSION', 'MANIFEST', 'RCDATA'])}",
            "pe_resource_lang": str(rng.choice(_LANGS)),
            "tags": sorted(set(rng.choice(_TAGS, size=2).tolist())),
        }
        # each group reuses its own toolkit profile most of the time
        for key, value in (profiles[g].items() if g >= 0 else ()):
            if rng.random() < cfg.attribute_typicality:
                rec[key] = value
        return rec

    def fill(pool: Dict[str, List[str]], g: int, relations: bool = True):
        density = cfg.assoc_density if relations else 0.0
        for h in pool["malware"]:
            rec = malware_record(g)
            if g < 0 or not relations:
                # commodity and report-private samples are family singletons: no homology edges
                del rec["avclass_FAM"]
            ips = [ip for ip in pool["ip"] if rng.random() < density]
            doms = [d for d in pool["domain"] if rng.random() < density]
            if ips:
                rec["contacts_ip"] = ips
            if doms:
                rec["contacts_domain"] = doms
            enrichment["malware"][h] = rec
        for ip in pool["ip"]:
            geo = country[g] if g >= 0 and rng.random() < cfg.attribute_typicality else str(rng.choice(_COUNTRIES))
            rec = {"verdict": "malicious", "geolocation": geo}
            doms = [d for d in pool["domain"] if relations and rng.random() < cfg.resolution_density]
            if doms:
                rec["resolves_domains"] = doms
            enrichment["ip"][ip] = rec
        for d in pool["domain"]:
            cat = category[g] if g >= 0 and rng.random() < cfg.attribute_typicality else str(rng.choice(_CATEGORIES))
            enrichment["domain"][d] = {"verdict": "malicious", "malicious_category": cat}
        for u in pool["url"]:
            enrichment["url"][u] = {"malicious_engines": int(rng.integers(11, 40))}
        for c in pool["vulnerability"]:
            enrichment["vulnerability"][c] = {"description": f"Remote code execution in {gen.word()} service"}

    for g, pool in enumerate(pools):
        fill(pool, g)
    fill(shared, -1)

    def flat(pool):
        return [(k, v) for k in POOL_KINDS for v in pool[k]]

    def fresh(g: int, n: int) -> List[Tuple[str, str]]:
        """Report-private IOCs with group-typical attributes (no reuse across reports)."""
        kinds = [_FRESH_KINDS[i % len(_FRESH_KINDS)] for i in range(n)]
        pool = {k: [] for k in POOL_KINDS}
        for kind in kinds:
            pool[kind].append(getattr(gen, kind)())
        fill(pool, g, relations=False)
        return flat(pool)

    shared_flat = flat(shared)
    isolated_rate = cfg.noise_rate if cfg.isolated_rate is None else cfg.isolated_rate
    records = []
    lo, hi = cfg.iocs_per_report
    # case numbers are shuffled so report text carries no group information
    case_no = rng.permutation(cfg.groups * cfg.reports_per_group) + 1
    for g, name in enumerate(group_names):
        own = flat(pools[g])
        for r in range(cfg.reports_per_group):
            k = int(rng.integers(lo, hi + 1))
            n_noise = int(rng.binomial(k, cfg.noise_rate)) if shared_flat else 0
            if rng.random() < isolated_rate:
                picks = fresh(g, k - n_noise)
            else:
                n_own = min(k - n_noise, len(own))
                picks = [own[i] for i in sorted(rng.choice(len(own), size=n_own, replace=False))] if n_own else []
            if n_noise:
                n_noise = min(n_noise, len(shared_flat))
                picks += [shared_flat[i] for i in sorted(rng.choice(len(shared_flat), size=n_noise, replace=False))]
            order = rng.permutation(len(picks))
            case = int(case_no[g * cfg.reports_per_group + r])
            lines = [f"Campaign analysis, case {case:04d}. Indicators observed during the intrusion:"]
            lines += [f"- {_defang(*picks[i])}" for i in order]
            records.append({"id": f"report:{name.lower()}-{r:03d}", "group": name, "text": "\n".join(lines)})
    logger.info("synthetic corpus: %d reports, %d groups", len(records), cfg.groups)
    for section in enrichment.values():
        for key in list(section):
            section[key] = dict(sorted(section[key].items()))
    return records, {k: dict(sorted(v.items())) for k, v in enrichment.items()}


def write_synthetic(cfg: SynthConfig, out_dir) -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, enrichment = generate_synthetic(cfg)
    rpath, epath = out / "reports.jsonl", out / "enrichment.json"
    rpath.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), "utf-8")
    epath.write_text(json.dumps(enrichment, sort_keys=True, indent=1) + "\n", "utf-8")
    (out / "synth_config.json").write_text(json.dumps(asdict(cfg), sort_keys=True, indent=1) + "\n", "utf-8")
    return rpath, epath
