"""The full system description: arrivals, batch law, nodes, kernel choice."""

from __future__ import annotations

from dataclasses import dataclass, field

from .arrivals import ArrivalProcess
from .batch import BatchLaw
from .errors import ValidationError
from .kernels import (TimeGrid, build_markov_kernel, build_renewal_kernel,
                      load_tabulated_kernel_csv)
from .service import EXPONENTIAL, ServiceNode, validate_nodes


@dataclass
class AnalysisDefaults:
    cap: int = 20
    rtol: float = 1e-8
    seed: int = 20240901

    def __post_init__(self):
        if self.cap < 0:
            raise ValidationError("analysis cap must be >= 0")
        if self.rtol <= 0:
            raise ValidationError("analysis rtol must be > 0")


@dataclass
class NetworkModel:
    """Queue count, arrival stream, batch law, and per-node service/routing."""

    J: int
    arrival: ArrivalProcess
    batch: BatchLaw
    nodes: list[ServiceNode] | None
    kernel_spec: dict = field(default_factory=lambda: {"representation": "auto"})
    analysis: AnalysisDefaults = field(default_factory=AnalysisDefaults)

    def __post_init__(self):
        if self.batch.J != self.J:
            raise ValidationError(
                f"batch law dimension {self.batch.J} != queue count {self.J}")
        if self.nodes is not None:
            validate_nodes(self.nodes, self.J)

    def build_kernel(self):
        """Construct the occupancy kernel named by ``kernel_spec``."""
        rep = self.kernel_spec.get("representation", "auto")
        if rep == "tabulated":
            return load_tabulated_kernel_csv(self.kernel_spec["path"])
        if self.nodes is None:
            raise ValidationError("a node list is required unless the kernel is tabulated")
        if rep == "auto":
            all_markov = all(n.is_absorbing or n.service.kind == EXPONENTIAL
                             for n in self.nodes)
            rep = "markov-uniformization" if all_markov else "renewal-grid"
        if rep == "markov-uniformization":
            return build_markov_kernel(self.nodes, self.J)
        if rep == "renewal-grid":
            grid = TimeGrid(end=float(self.kernel_spec.get("end", 8.0)),
                            nodes=int(self.kernel_spec.get("nodes", 1025)))
            return build_renewal_kernel(self.nodes, self.J, grid)
        raise ValidationError(f"unknown kernel representation {rep!r}")
