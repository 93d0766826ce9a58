import csv
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

from utils import logger
from utils.errors import SchemaError
from utils.helper import load_json_file, save_json_file

AP_PROTOCOL = "pascal-all-points"

CSV_COLUMNS = (
    "run", "seed", "map", "u_recall", "unknown_nmi", "unknown_purity",
    "id_switches", "idf1_like", "track_precision", "track_recall",
)


@dataclass
class MetricReport:
    seed: int = 0
    map: Optional[float] = None
    per_class_ap: Dict[str, float] = field(default_factory=dict)
    u_recall: Optional[float] = None
    unknown_nmi: Optional[float] = None
    unknown_purity: Optional[float] = None
    id_switches: Optional[int] = None
    idf1_like: Optional[float] = None
    track_precision: Optional[float] = None
    track_recall: Optional[float] = None
    ap_protocol: str = AP_PROTOCOL
    config: Dict[str, Any] = field(default_factory=dict)

    RATE_FIELDS = ("map", "u_recall", "unknown_nmi", "unknown_purity",
                   "idf1_like", "track_precision", "track_recall")

    def validate(self) -> None:
        """Raise ValueError when a rate falls outside [0, 1]."""
        rates = {name: getattr(self, name) for name in self.RATE_FIELDS}
        rates.update({f"ap[{k}]": v for k, v in self.per_class_ap.items()})
        for name, value in rates.items():
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"Metric {name}={value} outside [0, 1]")

    def merge(self, other: "MetricReport") -> "MetricReport":
        """Copy of self with every metric other has set."""
        merged = MetricReport(**asdict(self))
        for name, value in asdict(other).items():
            if name in ("seed", "ap_protocol", "config"):
                continue
            if value is not None and value != {}:
                setattr(merged, name, value)
        return merged

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, path: Optional[str] = None) -> "MetricReport":
        try:
            return cls(**data)
        except TypeError as e:
            raise SchemaError(f"invalid metric report ({e})", path=path)


def write_report(report: MetricReport, path: str) -> str:
    """
    Validate and write a report as JSON.

    Args:
        report: Report to write
        path: Destination file

    Returns:
        The path written
    """
    report.validate()
    save_json_file(report.to_dict(), path)
    logger.info(f"Metric report written to {path}")
    return path


def read_report(path: str) -> MetricReport:
    if not os.path.exists(path):
        raise SchemaError("metric report not found", path=path)
    return MetricReport.from_dict(load_json_file(path), path=path)


def append_csv_row(report: MetricReport, path: str, run: str) -> None:
    """Append one summary row, writing the header when the file is new."""
    is_new = not os.path.exists(path)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    row = {"run": run, **{k: v for k, v in report.to_dict().items() if k in CSV_COLUMNS}}
    with open(path, "a", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        if is_new:
            writer.writeheader()
        writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in CSV_COLUMNS})
