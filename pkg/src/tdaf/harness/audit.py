"""Parameter audit: constructed counts checked against closed-form totals."""
from __future__ import annotations

from dataclasses import dataclass

from ..anar import anar_param_count
from ..backbones import make_stages, stage_param_count
from .config import RunConfig
from .train import build_model


@dataclass
class ParamAudit:
    total: int
    backbone: int
    attention: int
    head: int
    baseline_total: int
    formula_total: int

    @property
    def overhead_pct(self) -> float:
        return 100.0 * (self.total - self.baseline_total) / self.baseline_total

    @property
    def consistent(self) -> bool:
        return self.total == self.formula_total


def audit(cfg: RunConfig) -> ParamAudit:
    model = build_model(cfg)
    named = model.named_parameters()
    count = lambda pred: sum(p.data.size for n, p in named if pred(n))  # noqa: E731
    attention = count(lambda n: n.startswith("body.attentions."))
    head = count(lambda n: n.startswith("head."))
    backbone = count(lambda n: n.startswith("body.stages."))

    specs = make_stages(cfg.backbone())
    k = cfg.backbone_num_classes
    formula_backbone = sum(stage_param_count(s) for s in specs)
    formula_attention = 0
    if cfg.flows_mode == "attention":
        formula_attention = sum(anar_param_count(cfg.anar(s.out_channels)) for s in specs[:-1])
    head_in = model.head.channels
    formula_total = formula_backbone + formula_attention + head_in * k + k
    baseline_total = formula_backbone + specs[-1].out_channels * k + k
    return ParamAudit(model.num_parameters(), backbone, attention, head, baseline_total, formula_total)
