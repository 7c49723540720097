import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from utils import logger

log = logger.customLogger()

FLOAT_DIGITS = 17


def format_value(value: Any, digits: int = FLOAT_DIGITS) -> str:
    """Floats with a fixed number of significant digits, everything else via str()"""
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float) or type(value).__name__.startswith('float'):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return format(value, f'.{digits}g')
    if value is None:
        return ''
    return str(value)


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in ('branchfit', 'numpy', 'scipy'):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            if name == 'branchfit':
                from branchfit import __version__
                versions[name] = __version__
            else:
                versions[name] = 'unknown'
    return versions


def config_hash(document: Dict[str, Any]) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass
class CsvReport:
    """One emitted CSV: path, header schema and the rows written"""
    path: Path
    header: List[str]
    rows: List[List[Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def column(self, name: str) -> List[Any]:
        idx = self.header.index(name)
        return [row[idx] for row in self.rows]


class ReportManager:
    """Writes experiment CSVs with a '#' metadata preamble, plus JSON run summaries"""

    def __init__(self, report_dir: str = "results", metadata: Optional[Dict[str, Any]] = None,
                 float_digits: int = FLOAT_DIGITS):
        self.report_dir = Path(report_dir)
        self.report_dir.mkdir(parents=True, exist_ok=True)
        self.metadata = dict(metadata or {})
        self.metadata.setdefault('versions', package_versions())
        self.float_digits = float_digits
        self.reports: List[CsvReport] = []

    def preamble(self, extra: Optional[Dict[str, Any]] = None) -> List[str]:
        merged = dict(self.metadata)
        merged.update(extra or {})
        lines = []
        for key in sorted(merged):
            value = merged[key]
            if isinstance(value, (dict, list, tuple)):
                value = json.dumps(value, sort_keys=True)
            lines.append(f"# {key}: {value}")
        return lines

    def write_csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]],
                  extra_metadata: Optional[Dict[str, Any]] = None) -> CsvReport:
        """Write rows under report_dir/name; row order is the caller's"""
        path = self.report_dir / name
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"{name}: row of length {len(row)} does not match header of length {len(header)}")
        with path.open('w', newline='', encoding='utf-8') as fh:
            for line in self.preamble(extra_metadata):
                fh.write(line + "\n")
            writer = csv.writer(fh, lineterminator='\n')
            writer.writerow(list(header))
            for row in rows:
                writer.writerow([format_value(v, self.float_digits) for v in row])

        report = CsvReport(path=path, header=list(header), rows=[list(r) for r in rows],
                           metadata=dict(self.metadata, **(extra_metadata or {})))
        self.reports.append(report)
        log.info(f"Wrote {len(rows)} rows to {path}")
        return report

    def write_summary(self, name: str, summary: Dict[str, Any]) -> Path:
        """JSON summary next to the CSVs; keys sorted so output is stable"""
        path = self.report_dir / name
        with path.open('w', encoding='utf-8') as fh:
            json.dump({'metadata': self.metadata, 'summary': summary}, fh, indent=2, sort_keys=True,
                      default=_json_default)
            fh.write("\n")
        log.info(f"Summary saved: {path}")
        return path


def _json_default(value):
    if hasattr(value, 'tolist'):
        return value.tolist()
    if hasattr(value, 'item'):
        return value.item()
    return str(value)


def read_csv_report(path) -> CsvReport:
    """Load a CSV written by ReportManager, keeping the preamble as metadata strings"""
    path = Path(path)
    meta: Dict[str, Any] = {}
    data_lines = []
    with path.open('r', encoding='utf-8') as fh:
        for line in fh:
            if line.startswith('#'):
                key, _, value = line[1:].strip().partition(':')
                meta[key.strip()] = value.strip()
            else:
                data_lines.append(line)
    reader = csv.reader(data_lines)
    header = next(reader)
    rows = [row for row in reader if row]
    return CsvReport(path=path, header=header, rows=rows, metadata=meta)
