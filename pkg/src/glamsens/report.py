"""Container for Sobol' index estimates and its JSON / CSV forms."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

CLIP_RANGE = (-0.1, 1.1)
KINDS = ("first", "total", "interaction", "closed")
CSV_COLUMNS = ("qoi", "estimator", "kind", "subset", "variables", "value", "display", "ci_low", "ci_high")


def _clip(v):
    lo, hi = CLIP_RANGE
    return min(max(v, lo), hi)


@dataclass
class SobolEntry:
    kind: str
    subset: tuple
    value: float
    ci: tuple | None = None

    @property
    def display(self):
        return _clip(self.value)


@dataclass
class SobolReport:
    """Index estimates keyed by (kind, subset of variable positions).

    ``value`` is the raw estimate; ``display`` is clipped to [-0.1, 1.1]
    because Monte Carlo estimates can leave [0, 1] by noise.
    """

    qoi: str
    variables: list
    estimator: str
    entries: list = field(default_factory=list)
    sample_sizes: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, kind, subset, value, ci=None):
        if kind not in KINDS:
            raise ValueError(f"unknown index kind {kind!r}")
        self.entries.append(SobolEntry(kind, tuple(int(s) for s in subset), float(value),
                                       None if ci is None else (float(ci[0]), float(ci[1]))))

    def get(self, kind, subset):
        subset = tuple(subset) if not isinstance(subset, int) else (subset,)
        for e in self.entries:
            if e.kind == kind and e.subset == subset:
                return e.value
        raise KeyError((kind, subset))

    def vector(self, kind):
        """Values of a per-variable index kind in variable order."""
        return [self.get(kind, (i,)) for i in range(len(self.variables))]

    def set_interval(self, kind, subset, ci):
        for e in self.entries:
            if e.kind == kind and e.subset == tuple(subset):
                e.ci = (float(ci[0]), float(ci[1]))
                return
        raise KeyError((kind, subset))

    def _label(self, subset):
        return "+".join(self.variables[i] for i in subset)

    def to_dict(self):
        return {
            "qoi": self.qoi,
            "estimator": self.estimator,
            "variables": list(self.variables),
            "sample_sizes": dict(self.sample_sizes),
            "metadata": dict(self.metadata),
            "indices": [
                {
                    "kind": e.kind,
                    "subset": list(e.subset),
                    "variables": self._label(e.subset),
                    "value": e.value,
                    "display": e.display,
                    "ci": None if e.ci is None else list(e.ci),
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d):
        rep = cls(d["qoi"], list(d["variables"]), d["estimator"],
                  sample_sizes=dict(d.get("sample_sizes", {})), metadata=dict(d.get("metadata", {})))
        for e in d["indices"]:
            rep.add(e["kind"], e["subset"], e["value"], e.get("ci"))
        return rep

    def csv_rows(self):
        for e in self.entries:
            yield {
                "qoi": self.qoi,
                "estimator": self.estimator,
                "kind": e.kind,
                "subset": " ".join(str(i + 1) for i in e.subset),
                "variables": self._label(e.subset),
                "value": repr(e.value),
                "display": repr(e.display),
                "ci_low": "" if e.ci is None else repr(e.ci[0]),
                "ci_high": "" if e.ci is None else repr(e.ci[1]),
            }

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.csv_rows())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, variables):
        """Rebuild the index values from :meth:`to_csv` output (metadata is not kept).

        Lines starting with ``#`` (provenance comments) are skipped.
        """
        lines = [ln for ln in io.StringIO(text) if not ln.startswith("#")]
        rows = list(csv.DictReader(lines))
        if not rows:
            raise ValueError("empty report CSV")
        rep = cls(rows[0]["qoi"], list(variables), rows[0]["estimator"])
        for r in rows:
            subset = tuple(int(s) - 1 for s in r["subset"].split())
            ci = None if r["ci_low"] == "" else (float(r["ci_low"]), float(r["ci_high"]))
            rep.add(r["kind"], subset, float(r["value"]), ci)
        return rep
