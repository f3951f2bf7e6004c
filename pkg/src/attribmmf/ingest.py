"""CTI report ingestion: IOC extraction, cleaning, enrichment and graph assembly."""
from __future__ import annotations

import ipaddress
import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import FormatError, IdConflict
from .graph import HetGraph, Node, NodeType, RelType, node_id

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# refanging

_DEFANG_RE = re.compile(
    r"hxxps|hxxp|\[\.\]|\(\.\)|\{\.\}|\[dot\]|\[:\]|\[@\]|\[at\]",
    re.IGNORECASE,
)
_DEFANG_MAP = {
    "hxxps": "https", "hxxp": "http", "[.]": ".", "(.)": ".", "{.}": ".",
    "[dot]": ".", "[:]": ":", "[@]": "@", "[at]": "@",
}


def _refang_marked(text: str) -> Tuple[str, List[int]]:
    """Refang ``text``; also return output offsets where a replacement landed."""
    out = []
    marks = []
    pos = 0
    written = 0
    for m in _DEFANG_RE.finditer(text):
        chunk = text[pos:m.start()]
        out.append(chunk)
        written += len(chunk)
        rep = _DEFANG_MAP[m.group(0).lower()]
        out.append(rep)
        marks.append(written)
        written += len(rep)
        pos = m.end()
    out.append(text[pos:])
    return "".join(out), marks


def refang(text: str) -> Tuple[str, bool]:
    """Undo common defanging (``hxxp``, ``[.]``, ...). Returns ``(text, defanged)``."""
    result, marks = _refang_marked(text)
    return result, bool(marks)


# ---------------------------------------------------------------------------
# ATT&CK table

@dataclass(frozen=True)
class AttackEntry:
    id: str
    name: str
    description: str
    tactic: Optional[str] = None


@dataclass
class AttackTable:
    entries: Dict[str, AttackEntry]

    @classmethod
    def load(cls, path=None) -> "AttackTable":
        if path is None:
            raw = json.loads(resources.files("attribmmf.data").joinpath("attack_table.json").read_text("utf-8"))
        else:
            raw = json.loads(Path(path).read_text("utf-8"))
        entries = {}
        for t in raw.get("tactics", []):
            entries[t["id"]] = AttackEntry(t["id"], t["name"], t.get("description", ""))
        for t in raw.get("techniques", []):
            entries[t["id"]] = AttackEntry(t["id"], t["name"], t.get("description", ""), t.get("tactic"))
        return cls(entries)

    def get(self, attck_id: str) -> Optional[AttackEntry]:
        return self.entries.get(attck_id)

    def associated_tactic(self, attck_id: str) -> Optional[str]:
        entry = self.entries.get(attck_id)
        if entry is not None and entry.tactic:
            return entry.tactic
        if "." in attck_id:
            parent = self.entries.get(attck_id.split(".")[0])
            if parent is not None:
                return parent.tactic
        return None

    @property
    def name_pattern(self):
        return _name_pattern(tuple(sorted((e.name, e.id) for e in self.entries.values())))


@lru_cache(maxsize=8)
def _name_pattern(pairs):
    lookup = {}
    for name, aid in pairs:
        lookup.setdefault(name.lower(), aid)
    names = sorted(lookup, key=len, reverse=True)
    if not names:
        return None, lookup
    rx = re.compile(r"(?<![\w])(" + "|".join(re.escape(n) for n in names) + r")(?![\w])", re.IGNORECASE)
    return rx, lookup


@lru_cache(maxsize=1)
def default_attack_table() -> AttackTable:
    return AttackTable.load()


# ---------------------------------------------------------------------------
# extraction

_TLDS = (
    "com net org info biz io co ru cn uk de jp kr in br fr it nl pl ir kp tk top xyz online site club us "
    "eu me tv cc ws su ua kz by vn tw hk sg au ca ch se no es pw live space tech website pro mobi name "
    "asia gov edu mil int app dev cloud link host news today world store shop ga ml cf gq am la to ly "
    "tr il ae sa pk id my th ph mx ar cl cz sk hu ro bg gr pt at be dk fi ie lt lv ee md ge az uz"
).split()
_FILE_EXTS = (
    "exe dll sys bat cmd ps1 psm1 vbs vbe js jse hta lnk scr doc docx docm dot dotm xls xlsx xlsm ppt pptx "
    "pdf rtf rar 7z iso img jar apk elf py bin dat tmp ini cfg log msi cab chm wsf cpl ocx drv"
).split()
_REG_ROOTS = {
    "HKLM": "HKEY_LOCAL_MACHINE", "HKCU": "HKEY_CURRENT_USER", "HKCR": "HKEY_CLASSES_ROOT",
    "HKU": "HKEY_USERS", "HKCC": "HKEY_CURRENT_CONFIG",
}

_OCTET = r"(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)"
_LABEL = r"[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?"
_TLD_ALT = "|".join(sorted(_TLDS, key=len, reverse=True))
_EXT_ALT = "|".join(sorted(_FILE_EXTS, key=len, reverse=True))

PATTERNS: Dict[str, re.Pattern] = {
    "url": re.compile(r"\b(?:https?|ftp)://[^\s<>\"'`\]\)]+", re.IGNORECASE),
    "email": re.compile(rf"\b[a-z0-9._%+-]+@(?:{_LABEL}\.)+(?:{_TLD_ALT})\b", re.IGNORECASE),
    "ip": re.compile(rf"(?<![\d.]){_OCTET}\.{_OCTET}\.{_OCTET}\.{_OCTET}(?!\.?\d)"),
    "domain": re.compile(rf"\b(?:{_LABEL}\.)+(?:{_TLD_ALT})\b(?![.-]?\w)", re.IGNORECASE),
    "filename": re.compile(rf"(?<![\w\\/.-])[\w-]+(?:\.[\w-]+)*\.(?:{_EXT_ALT})\b(?!\.\w)", re.IGNORECASE),
    "filepath_win": re.compile(
        r"(?:\b[a-z]:|%[a-z_]+%)\\(?:[^\\/:*?\"<>|\s]+\\)*[^\\/:*?\"<>|\s]+", re.IGNORECASE),
    "filepath_unix": re.compile(r"(?<![\w/:.])(?:/[\w.-]+){2,}"),
    "registry": re.compile(
        r"\b(?:HKEY_LOCAL_MACHINE|HKEY_CURRENT_USER|HKEY_CLASSES_ROOT|HKEY_USERS|HKEY_CURRENT_CONFIG"
        r"|HKLM|HKCU|HKCR|HKU|HKCC)(?:\\[^\s\\\"'<>,;]+)+"),
    "sha256": re.compile(r"\b[a-f0-9]{64}\b", re.IGNORECASE),
    "sha1": re.compile(r"\b[a-f0-9]{40}\b", re.IGNORECASE),
    "md5": re.compile(r"\b[a-f0-9]{32}\b", re.IGNORECASE),
    "cve": re.compile(r"\bCVE-\d{4}-\d{4,5}(?!\d)", re.IGNORECASE),
    "tactic_id": re.compile(r"\bTA\d{4}\b"),
    "technique_id": re.compile(r"\bT\d{4}(?:\.\d{3})?\b"),
}

_PATTERN_KIND = {
    "url": NodeType.URL, "email": NodeType.EMAIL, "ip": NodeType.IP, "domain": NodeType.DOMAIN,
    "filename": NodeType.FILENAME, "filepath_win": NodeType.FILEPATH, "filepath_unix": NodeType.FILEPATH,
    "registry": NodeType.REGISTRY, "sha256": NodeType.MALWARE, "sha1": NodeType.MALWARE,
    "md5": NodeType.MALWARE, "cve": NodeType.VULNERABILITY, "tactic_id": NodeType.TACTIC,
    "technique_id": NodeType.TECHNIQUE,
}
_TRAILING = ".,;:!?'\""


@dataclass(frozen=True)
class ExtractedIoc:
    kind: NodeType
    value: str
    span: Optional[Tuple[int, int]] = None
    defanged: bool = False


def canonicalize(kind, value: str) -> str:
    """Canonical form of an IOC value (refanged, case-normalised per kind)."""
    kind = NodeType(kind)
    value = refang(value.strip())[0]
    if kind in (NodeType.DOMAIN, NodeType.EMAIL, NodeType.MALWARE, NodeType.FILENAME):
        value = value.lower().rstrip(".")
    elif kind is NodeType.URL:
        m = re.match(r"([a-z]+)://([^/?#]*)(.*)", value, re.IGNORECASE | re.DOTALL)
        if m:
            value = f"{m.group(1).lower()}://{m.group(2).lower()}{m.group(3)}"
    elif kind is NodeType.REGISTRY:
        root, _, rest = value.partition("\\")
        root = _REG_ROOTS.get(root.upper(), root.upper())
        value = root + ("\\" + rest if rest else "")
    elif kind is NodeType.VULNERABILITY or kind is NodeType.TACTIC or kind is NodeType.TECHNIQUE:
        value = value.upper()
    return value


def _byte_offsets(text: str):
    if text.isascii():
        return None
    offs = [0]
    for ch in text:
        offs.append(offs[-1] + len(ch.encode("utf-8")))
    return offs


def extract_iocs(text: str, attack_table: Optional[AttackTable] = None, match_names: bool = True,
                 marks: Sequence[int] = ()) -> List[ExtractedIoc]:
    """Extract deduplicated IOCs from already-refanged ``text``.

    Overlapping candidates are resolved longest-first, then leftmost, so a URL
    swallows the domain inside it. ``marks`` are refang replacement offsets
    (see :func:`_refang_marked`); a URL covering one is flagged ``defanged``.
    """
    table = attack_table or default_attack_table()
    cands = []
    for name, rx in PATTERNS.items():
        kind = _PATTERN_KIND[name]
        for m in rx.finditer(text):
            start, end = m.span()
            raw = m.group(0)
            if kind in (NodeType.URL, NodeType.REGISTRY, NodeType.FILEPATH):
                stripped = raw.rstrip(_TRAILING)
                end -= len(raw) - len(stripped)
                raw = stripped
            if not raw:
                continue
            cands.append((start, end, kind, raw))
    if match_names:
        rx, lookup = table.name_pattern
        if rx is not None:
            for m in rx.finditer(text):
                aid = lookup[m.group(1).lower()]
                kind = NodeType.TACTIC if aid.startswith("TA") else NodeType.TECHNIQUE
                cands.append((m.start(), m.end(), kind, aid))

    cands.sort(key=lambda c: (-(c[1] - c[0]), c[0]))
    taken: List[Tuple[int, int]] = []
    chosen = []
    for start, end, kind, raw in cands:
        if any(start < e and s < end for s, e in taken):
            continue
        taken.append((start, end))
        chosen.append((start, end, kind, raw))
    chosen.sort(key=lambda c: c[0])

    offs = _byte_offsets(text)
    seen = set()
    out = []
    for start, end, kind, raw in chosen:
        value = canonicalize(kind, raw)
        key = (kind, value)
        if key in seen:
            continue
        seen.add(key)
        defanged = any(start <= p < end for p in marks)
        span = (start, end) if offs is None else (offs[start], offs[end])
        out.append(ExtractedIoc(kind, value, span, defanged))
    return out


# ---------------------------------------------------------------------------
# whitelist and enrichment

DEFAULT_WHITELIST = ("cidr:10.0.0.0/8", "cidr:172.16.0.0/12", "cidr:192.168.0.0/16", "cidr:127.0.0.0/8")


class Whitelist:
    """Exact values, ``cidr:<net>/<bits>`` ranges and ``suffix:<domain>`` rules."""

    def __init__(self, lines: Iterable[str] = (), include_defaults: bool = True):
        self.exact = set()
        self.networks = []
        self.suffixes = []
        entries = list(DEFAULT_WHITELIST) if include_defaults else []
        entries.extend(lines)
        for lineno, line in enumerate(entries, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("cidr:"):
                try:
                    self.networks.append(ipaddress.ip_network(line[5:].strip(), strict=False))
                except ValueError as exc:
                    raise FormatError(f"bad cidr rule: {exc}", line=lineno) from None
            elif line.startswith("suffix:"):
                self.suffixes.append(line[7:].strip().lower().lstrip("."))
            else:
                self.exact.add(line.lower())

    @classmethod
    def load(cls, path, include_defaults: bool = True) -> "Whitelist":
        return cls(Path(path).read_text("utf-8").splitlines(), include_defaults)

    def __contains__(self, value: str) -> bool:
        v = value.lower()
        if v in self.exact:
            return True
        try:
            addr = ipaddress.ip_address(v)
        except ValueError:
            addr = None
        if addr is not None:
            return any(addr in net for net in self.networks)
        return any(v == s or v.endswith("." + s) for s in self.suffixes)


_VERDICTS = {"malicious", "clean", "unknown"}
_MALWARE_ATTRS = ("avclass_BEH", "avclass_CLASS", "avclass_FAM", "avclass_FILE",
                  "imphash", "pe_resource", "pe_resource_lang", "tags")


@dataclass
class Enrichment:
    """Offline stand-in for the VirusTotal/Avclass lookups."""

    malware: Dict[str, dict] = field(default_factory=dict)
    ip: Dict[str, dict] = field(default_factory=dict)
    domain: Dict[str, dict] = field(default_factory=dict)
    url: Dict[str, dict] = field(default_factory=dict)
    vulnerability: Dict[str, dict] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, path=None) -> "Enrichment":
        if not isinstance(data, dict):
            raise FormatError("enrichment must be an object", path)
        unknown = set(data) - {"malware", "ip", "domain", "url", "vulnerability"}
        if unknown:
            raise FormatError(f"unknown enrichment sections {sorted(unknown)}", path)
        out = cls()
        for section in ("malware", "ip", "domain", "url", "vulnerability"):
            recs = data.get(section, {}) or {}
            kind = {"malware": NodeType.MALWARE, "ip": NodeType.IP, "domain": NodeType.DOMAIN,
                    "url": NodeType.URL, "vulnerability": NodeType.VULNERABILITY}[section]
            target = getattr(out, section)
            for key, rec in recs.items():
                if not isinstance(rec, dict):
                    raise FormatError(f"{section}[{key!r}] must be an object", path)
                for count in ("related_urls_malicious", "malicious_engines"):
                    if count in rec and (not isinstance(rec[count], int) or rec[count] < 0):
                        raise FormatError(f"{section}[{key!r}].{count} must be a nonnegative integer", path)
                if "verdict" in rec and rec["verdict"] not in _VERDICTS:
                    raise FormatError(f"{section}[{key!r}].verdict must be one of {sorted(_VERDICTS)}", path)
                target[canonicalize(kind, key)] = rec
        return out

    @classmethod
    def load(cls, path) -> "Enrichment":
        try:
            data = json.loads(Path(path).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
        return cls.from_dict(data, path)

    def is_empty(self) -> bool:
        return not (self.malware or self.ip or self.domain or self.url or self.vulnerability)


# ---------------------------------------------------------------------------
# cleaning

@dataclass(frozen=True)
class CleanVerdict:
    kept: bool
    reason: str  # whitelist | defanged_url | engine_threshold | enrichment_malicious | enrichment_clean | no_evidence


URL_ENGINE_THRESHOLD = 10


def clean_ioc(ioc: ExtractedIoc, whitelist: Whitelist, enrichment: Enrichment,
              keep_unverified: bool = False) -> CleanVerdict:
    if ioc.kind in (NodeType.IP, NodeType.DOMAIN):
        if ioc.value in whitelist:
            return CleanVerdict(False, "whitelist")
        rec = (enrichment.ip if ioc.kind is NodeType.IP else enrichment.domain).get(ioc.value)
        if rec is None:
            return CleanVerdict(keep_unverified, "no_evidence")
        if rec.get("verdict") == "malicious" or rec.get("related_urls_malicious", 0) > 0:
            return CleanVerdict(True, "enrichment_malicious")
        return CleanVerdict(False, "enrichment_clean")
    if ioc.kind is NodeType.URL:
        if ioc.defanged:
            return CleanVerdict(True, "defanged_url")
        rec = enrichment.url.get(ioc.value)
        if rec is None or "malicious_engines" not in rec:
            return CleanVerdict(keep_unverified, "no_evidence")
        return CleanVerdict(rec["malicious_engines"] > URL_ENGINE_THRESHOLD, "engine_threshold")
    return CleanVerdict(True, "no_evidence")


def clean_iocs(iocs: Sequence[ExtractedIoc], whitelist: Whitelist, enrichment: Enrichment,
               keep_unverified: bool = False) -> Tuple[List[ExtractedIoc], List[CleanVerdict]]:
    verdicts = [clean_ioc(i, whitelist, enrichment, keep_unverified) for i in iocs]
    kept = [i for i, v in zip(iocs, verdicts) if v.kept]
    return kept, verdicts


# ---------------------------------------------------------------------------
# graph assembly

def _ioc_attrs(kind: NodeType, value: str, table: AttackTable) -> Dict[str, str]:
    if kind is NodeType.MALWARE:
        return {"hash": value}
    if kind is NodeType.IP:
        return {"ip_address": value}
    if kind is NodeType.DOMAIN:
        return {"name": value}
    if kind is NodeType.VULNERABILITY:
        return {"cve_id": value}
    if kind in (NodeType.TACTIC, NodeType.TECHNIQUE):
        attrs = {"attck_id": value}
        entry = table.get(value)
        if entry is not None:
            attrs["name"] = entry.name
            if entry.description:
                attrs["description"] = entry.description
        if kind is NodeType.TECHNIQUE:
            tactic = table.associated_tactic(value)
            if tactic:
                attrs["associated_tactic"] = tactic
        return attrs
    return {kind.value: value}


def _ensure(graph: HetGraph, kind: NodeType, value: str, table: AttackTable) -> str:
    nid = node_id(kind, value)
    if nid not in graph:
        graph.add_node(Node(nid, kind, _ioc_attrs(kind, value, table)))
    return nid


def _str_attr(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def enrich_graph(graph: HetGraph, enrichment: Enrichment, attack_table: Optional[AttackTable] = None) -> HetGraph:
    """Fill IOC attributes and add resolution/association/homology edges in place.

    Relations are expanded one hop from the IOCs already in the graph (both the
    forward lists in a record and reverse lookups); nodes created that way get
    their attributes filled too, and any record relation whose two endpoints
    end up present is linked.
    """
    table = attack_table or default_attack_table()
    ip_to_mw: Dict[str, List[str]] = {}
    dom_to_mw: Dict[str, List[str]] = {}
    for h in sorted(enrichment.malware):
        rec = enrichment.malware[h]
        for ip in rec.get("contacts_ip", []) or []:
            ip_to_mw.setdefault(canonicalize(NodeType.IP, ip), []).append(h)
        for d in rec.get("contacts_domain", []) or []:
            dom_to_mw.setdefault(canonicalize(NodeType.DOMAIN, d), []).append(h)
    ip_to_dom: Dict[str, List[str]] = {}
    for d in sorted(enrichment.domain):
        for ip in enrichment.domain[d].get("resolves_ips", []) or []:
            ip_to_dom.setdefault(canonicalize(NodeType.IP, ip), []).append(d)
    dom_to_ip: Dict[str, List[str]] = {}
    for ip in sorted(enrichment.ip):
        for d in enrichment.ip[ip].get("resolves_domains", []) or []:
            dom_to_ip.setdefault(canonicalize(NodeType.DOMAIN, d), []).append(ip)

    def related(kind: NodeType, value: str):
        """(kind, value, rel) triples reachable from one node via the records."""
        out = []
        if kind is NodeType.MALWARE:
            rec = enrichment.malware.get(value, {})
            out += [(NodeType.IP, canonicalize(NodeType.IP, v), RelType.IP_MALWARE_ASSOC)
                    for v in rec.get("contacts_ip", []) or []]
            out += [(NodeType.DOMAIN, canonicalize(NodeType.DOMAIN, v), RelType.DOMAIN_MALWARE_ASSOC)
                    for v in rec.get("contacts_domain", []) or []]
        elif kind is NodeType.IP:
            rec = enrichment.ip.get(value, {})
            doms = [canonicalize(NodeType.DOMAIN, v) for v in rec.get("resolves_domains", []) or []]
            doms += ip_to_dom.get(value, [])
            out += [(NodeType.DOMAIN, d, RelType.RESOLUTION) for d in doms]
            out += [(NodeType.MALWARE, h, RelType.IP_MALWARE_ASSOC) for h in ip_to_mw.get(value, [])]
        elif kind is NodeType.DOMAIN:
            rec = enrichment.domain.get(value, {})
            ips = [canonicalize(NodeType.IP, v) for v in rec.get("resolves_ips", []) or []]
            ips += dom_to_ip.get(value, [])
            out += [(NodeType.IP, ip, RelType.RESOLUTION) for ip in ips]
            out += [(NodeType.MALWARE, h, RelType.DOMAIN_MALWARE_ASSOC) for h in dom_to_mw.get(value, [])]
        return out

    def value_of(nid: str) -> str:
        return nid.split(":", 1)[1]

    expandable = (NodeType.MALWARE, NodeType.IP, NodeType.DOMAIN)
    seeds = [n for n in graph.node_ids() if graph.kind(n) in expandable]
    for nid in seeds:
        for kind, value, rel in related(graph.kind(nid), value_of(nid)):
            other = _ensure(graph, kind, value, table)
            graph.add_edge(nid, other, rel)

    for nid in graph.node_ids():
        kind = graph.kind(nid)
        value = value_of(nid)
        attrs = {}
        if kind is NodeType.MALWARE and value in enrichment.malware:
            rec = enrichment.malware[value]
            attrs = {a: _str_attr(rec[a]) for a in _MALWARE_ATTRS if rec.get(a) not in (None, "", [])}
        elif kind is NodeType.IP and value in enrichment.ip:
            if enrichment.ip[value].get("geolocation"):
                attrs = {"geolocation": str(enrichment.ip[value]["geolocation"])}
        elif kind is NodeType.DOMAIN and value in enrichment.domain:
            if enrichment.domain[value].get("malicious_category"):
                attrs = {"malicious_category": str(enrichment.domain[value]["malicious_category"])}
        elif kind is NodeType.VULNERABILITY and value in enrichment.vulnerability:
            if enrichment.vulnerability[value].get("description"):
                attrs = {"description": str(enrichment.vulnerability[value]["description"])}
        if attrs:
            graph.add_node(Node(nid, kind, attrs))

    for nid in graph.node_ids():
        kind = graph.kind(nid)
        if kind not in expandable:
            continue
        for okind, value, rel in related(kind, value_of(nid)):
            other = node_id(okind, value)
            if other in graph and other != nid:
                graph.add_edge(nid, other, rel)

    families: Dict[str, List[str]] = {}
    for nid in graph.node_ids(NodeType.MALWARE):
        fam = graph.nodes[nid].attrs.get("avclass_FAM", "")
        if fam:
            families.setdefault(fam, []).append(nid)
    for fam in sorted(families):
        members = families[fam]
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                graph.add_edge(a, b, RelType.MALWARE_HOMOLOGY)
    return graph


@dataclass
class RawReport:
    id: str
    text: str = ""
    group: Optional[str] = None
    iocs: Optional[List[Tuple[str, str]]] = None


_KIND_ALIASES = {"hash": "malware", "md5": "malware", "sha1": "malware", "sha256": "malware",
                 "cve": "vulnerability", "ipv4": "ip"}


def load_reports(path) -> List[RawReport]:
    reports = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", path, lineno) from None
        if not isinstance(obj, dict) or "id" not in obj:
            raise FormatError("report object needs an 'id'", path, lineno)
        unknown = set(obj) - {"id", "group", "text", "iocs"}
        if unknown:
            raise FormatError(f"unknown report keys {sorted(unknown)}", path, lineno)
        iocs = None
        if obj.get("iocs") is not None:
            try:
                iocs = [(i["kind"], i["value"]) for i in obj["iocs"]]
            except (KeyError, TypeError):
                raise FormatError("iocs entries need 'kind' and 'value'", path, lineno) from None
        text = obj.get("text") or ""
        if not text and iocs is None:
            raise FormatError(f"report {obj['id']!r} has neither text nor iocs", path, lineno)
        reports.append(RawReport(str(obj["id"]), text, obj.get("group"), iocs))
    return reports


def _preextracted(pairs) -> List[ExtractedIoc]:
    out = []
    seen = set()
    for kind, value in pairs:
        kind = NodeType(_KIND_ALIASES.get(str(kind).lower(), str(kind).lower()))
        if kind is NodeType.REPORT:
            raise FormatError("pre-extracted IOC cannot be a report")
        _, defanged = refang(value)
        canon = canonicalize(kind, value)
        if (kind, canon) in seen:
            continue
        seen.add((kind, canon))
        out.append(ExtractedIoc(kind, canon, None, defanged))
    return out


def build_graph(reports: Sequence[RawReport], whitelist: Optional[Whitelist] = None,
                enrichment: Optional[Enrichment] = None, attack_table: Optional[AttackTable] = None,
                keep_unverified: bool = False, match_names: bool = True) -> HetGraph:
    """Run refang, extraction, cleaning, inclusion linking and enrichment."""
    whitelist = whitelist if whitelist is not None else Whitelist()
    enrichment = enrichment if enrichment is not None else Enrichment()
    table = attack_table or default_attack_table()
    ids = [r.id for r in reports]
    dupes = sorted({i for i in ids if ids.count(i) > 1}) if len(set(ids)) != len(ids) else []
    if dupes:
        raise IdConflict(f"duplicate report ids: {dupes}")

    graph = HetGraph()
    dropped = 0
    for rep in sorted(reports, key=lambda r: r.id):
        if rep.iocs is not None:
            iocs = _preextracted(rep.iocs)
        else:
            text, marks = _refang_marked(rep.text)
            iocs = extract_iocs(text, table, match_names=match_names, marks=marks)
        kept, verdicts = clean_iocs(iocs, whitelist, enrichment, keep_unverified)
        dropped += len(iocs) - len(kept)
        attrs = {"text": rep.text} if rep.text else {}
        graph.add_node(Node(rep.id, NodeType.REPORT, attrs))
        if rep.group is not None:
            graph.set_label(rep.id, rep.group)
        for ioc in kept:
            other = _ensure(graph, ioc.kind, ioc.value, table)
            graph.add_edge(rep.id, other, RelType.INCLUSION)
        if not kept:
            logger.warning("report %s has no IOCs left after cleaning; it stays isolated", rep.id)
    logger.info("ingest: %d reports, %d IOCs dropped by cleaning", len(reports), dropped)
    enrich_graph(graph, enrichment, table)
    graph.validate()
    return graph.freeze()
