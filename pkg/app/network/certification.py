"""
Gradient certification suites.

Each suite builds small random cases for one part of the model and checks
the recorded backward pass against central differences. A random point
whose ReLU, max or clamp inputs come within KINK_MARGIN of a breakpoint is
redrawn, so no finite-difference step straddles a kink.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np
from loguru import logger

from app.models.config import DfnConfig, EncoderConfig, HeadConfig, LossConfig
from app.network.classifier import cbam_gru_block, head_forward, init_cbam_gru, init_head
from app.network.decoder import attention_gate, init_attention_gate, patch_expand
from app.network.dfn import dfn_forward, init_dfn
from app.network.encoder import (
    init_swin_block,
    patch_embed,
    patch_merging,
    scaled_cosine_attention,
    swin_block,
)
from app.network.gru import gru_cell, init_gru
from app.network.params import ModelParams, add_layer_norm, glorot
from app.tensor import GradCheckReport, Tensor, float64, gradcheck, track_breakpoints
from app.tensor import ops
from app.training.losses import combined_loss, contrastive_loss, focal_loss, make_pairs
from app.utils.error import InvalidInputError

EPS = 1e-3
KINK_MARGIN = 1e-2
MAX_DRAWS = 100
MAX_ELEMENTS = 48
POINTS = 3


@dataclass
class Case:
    op: str
    fn: Callable[[ModelParams], Tensor]
    arrays: Dict[str, np.ndarray]


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    # random linear functional so every output element carries gradient
    return (out * Tensor(weights)).sum()


def _arrays(init: Callable[[ModelParams], None], **inputs: np.ndarray) -> Dict[str, np.ndarray]:
    p = ModelParams()
    init(p)
    arrays = {name: np.array(value, dtype=np.float64) for name, value in p.arrays().items()}
    arrays.update(inputs)
    return arrays


def ops_cases(rng: np.random.Generator) -> List[Case]:
    n = rng.standard_normal
    w_mm, w_c1, w_c2 = n((3, 2)), n((2, 4, 4)), n((3, 5, 5))
    w_sm, w_ln, w_vec, w_max, w_l2 = n((4, 6)), n((4, 6)), n(10), n(4), n((3, 5))
    w_layout = n((5, 5))
    index = np.array([0, 2, 2, 1])

    def layout(p):
        x = ops.roll(p["x"], (1, -2), (0, 1)).transpose(1, 0)
        picked = x[index].reshape(5, 4)
        return _project(ops.concat([picked, p["x"][:, :2]], axis=1)[:, :5], w_layout)

    return [
        Case("matmul", lambda p: _project(p["a"] @ p["b"], w_mm), {"a": n((3, 4)), "b": n((4, 2))}),
        Case(
            "conv1x1",
            lambda p: _project(ops.conv1x1(p["x"], p["w"], p["b"]), w_c1),
            {"x": n((3, 4, 4)), "w": n((2, 3)), "b": n(2)},
        ),
        Case(
            "conv2d",
            lambda p: _project(ops.conv2d(p["x"], p["w"], p["b"]), w_c2),
            {"x": n((2, 5, 5)), "w": n((3, 2, 3, 3)), "b": n(3)},
        ),
        Case("global_avg_pool", lambda p: _project(ops.global_avg_pool(p["x"]), w_vec[:3]), {"x": n((3, 4, 4))}),
        Case("softmax", lambda p: _project(ops.softmax(p["x"], axis=-1), w_sm), {"x": n((4, 6))}),
        Case(
            "layer_norm",
            lambda p: _project(ops.layer_norm(p["x"], p["gamma"], p["beta"]), w_ln),
            {"x": n((4, 6)), "gamma": n(6), "beta": n(6)},
        ),
        Case("sigmoid", lambda p: _project(ops.sigmoid(p["x"]), w_vec), {"x": 2 * n(10)}),
        Case("tanh", lambda p: _project(ops.tanh(p["x"]), w_vec), {"x": n(10)}),
        Case("gelu", lambda p: _project(ops.gelu(p["x"]), w_vec), {"x": 2 * n(10)}),
        Case("relu", lambda p: _project(ops.relu(p["x"]), w_vec), {"x": n(10)}),
        Case("max", lambda p: _project(p["x"].max(axis=1), w_max), {"x": n((4, 5))}),
        Case("l2_normalize", lambda p: _project(ops.l2_normalize(p["x"]), w_l2), {"x": n((3, 5))}),
        Case(
            "arithmetic",
            lambda p: _project(ops.sqrt(p["a"]) * ops.log(p["a"]) / p["b"] + ops.exp(-p["b"]) ** 1.5, w_vec),
            {"a": rng.uniform(0.5, 2.0, 10), "b": rng.uniform(0.5, 2.0, 10)},
        ),
        Case("layout", layout, {"x": n((5, 3))}),
    ]


def encoder_cases(rng: np.random.Generator) -> List[Case]:
    n = rng.standard_normal
    dim, heads, window = 8, 2, 4
    cases = []

    def attention(p):
        return scaled_cosine_attention(p["q"], p["k"], p["v"], ops.exp(p["log_tau"]), p["bias"])

    w_attn = n((heads, 4, 3))
    cases.append(
        Case(
            "scaled_cosine_attention",
            lambda p: _project(attention(p), w_attn),
            {
                "q": n((heads, 4, 3)),
                "k": n((heads, 4, 3)),
                "v": n((heads, 4, 3)),
                "log_tau": np.zeros(heads),
                "bias": 0.1 * n((heads, 4, 4)),
            },
        )
    )
    for shift in (0, window // 2):
        w_blk = n((8, 8, dim))
        arrays = _arrays(
            lambda p: init_swin_block(p.scope("blk"), dim, heads, window, 2.0, 1.0, rng),
            x=n((8, 8, dim)),
        )
        cases.append(
            Case(
                f"swin_block(shift={shift})",
                lambda p, s=shift, w=w_blk: _project(swin_block(p["x"], p.scope("blk"), heads, window, s), w),
                arrays,
            )
        )

    def init_merge(p):
        add_layer_norm(p, "ln", 4 * 4)
        p.add("w", glorot(rng, 16, 8))

    w_merge = n((2, 2, 8))
    cases.append(
        Case(
            "patch_merging",
            lambda p: _project(patch_merging(p["x"], p), w_merge),
            _arrays(init_merge, x=n((4, 4, 4))),
        )
    )
    cfg = EncoderConfig(
        image_size=8, patch_size=4, embed_dim=4, stage_depths=[1], heads_per_stage=[1], window_size=2
    )
    w_embed = n((4, 4))

    def init_embed(p):
        p.add("w", glorot(rng, 48, 4))
        p.add("b", np.zeros(4))

    cases.append(
        Case(
            "patch_embed",
            lambda p: _project(patch_embed(p["image"], p, cfg), w_embed),
            _arrays(init_embed, image=rng.uniform(0, 1, (3, 8, 8))),
        )
    )
    return cases


def dfn_cases(rng: np.random.Generator) -> List[Case]:
    cfg = DfnConfig(filters=3, reduction=4)
    w_out = rng.standard_normal((8, 4, 4))
    arrays = _arrays(lambda p: init_dfn(p, 8, cfg, rng), x=rng.standard_normal((8, 4, 4)))
    return [Case("dfn_forward", lambda p: _project(dfn_forward(p["x"], p), w_out), arrays)]


def decoder_cases(rng: np.random.Generator) -> List[Case]:
    n = rng.standard_normal
    w_h, w_gate, w_exp = n(5), n((8, 4, 4)), n((8, 8, 4))
    gru = _arrays(lambda p: init_gru(p, 3, 5, rng), x=n(3), h=n(5))

    def gate(p):
        gated, h_next = attention_gate(p["enc"], p["dec"], p["h"], p)
        return _project(gated, w_gate) + _project(h_next, w_h[:4])

    gate_arrays = _arrays(
        lambda p: init_attention_gate(p, 8, 4, 4, 3, rng), enc=n((8, 4, 4)), dec=n((8, 4, 4)), h=n(4)
    )

    def init_expand(p):
        p.add("w", glorot(rng, 8, 16))
        add_layer_norm(p, "ln", 4)

    return [
        Case("gru_cell", lambda p: _project(gru_cell(p["x"], p["h"], p), w_h), gru),
        Case("attention_gate", gate, gate_arrays),
        Case("patch_expand", lambda p: _project(patch_expand(p["x"], p), w_exp), _arrays(init_expand, x=n((4, 4, 8)))),
    ]


def head_cases(rng: np.random.Generator) -> List[Case]:
    n = rng.standard_normal
    cfg = HeadConfig(widths=[4, 4], gru_hidden=3, reduction=2, conv_kernel=3, spatial_kernel=3)
    w_blk, w_h, w_emb = n((4, 4, 4)), n(3), n(4)

    def block(p):
        out, h_next = cbam_gru_block(p["x"], p["h"], p)
        return _project(out, w_blk) + _project(h_next, w_h)

    def head(p):
        prob, embedding, _ = head_forward(p["x"], p, cfg)
        return prob + _project(embedding, w_emb)

    return [
        Case(
            "cbam_gru_block",
            block,
            _arrays(lambda p: init_cbam_gru(p, 4, 3, cfg, rng), x=n((4, 4, 4)), h=n(3)),
        ),
        Case("head_forward", head, _arrays(lambda p: init_head(p, 4, cfg, rng), x=n((4, 4, 4)))),
    ]


def loss_cases(rng: np.random.Generator) -> List[Case]:
    y = np.array([0, 1, 1, 0, 1, 0])
    verbatim, standard = LossConfig(), LossConfig(focal_variant="standard", gamma=1.5)

    def pairs(p):
        return make_pairs(p["emb"], y, "all", seed=0)

    return [
        Case("focal_loss", lambda p: focal_loss(y, ops.sigmoid(p["logits"]), verbatim), {"logits": rng.standard_normal(6)}),
        Case(
            "focal_loss(standard)",
            lambda p: focal_loss(y, ops.sigmoid(p["logits"]), standard),
            {"logits": rng.standard_normal(6)},
        ),
        Case(
            "contrastive_loss",
            lambda p: contrastive_loss(pairs(p), margin=2.0),
            {"emb": rng.standard_normal((6, 3))},
        ),
        Case(
            "combined_loss",
            lambda p: combined_loss(y, ops.sigmoid(p["logits"]), pairs(p), LossConfig(margin=2.0)),
            {"logits": rng.standard_normal(6), "emb": rng.standard_normal((6, 3))},
        ),
    ]


SUITES: Dict[str, Callable[[np.random.Generator], List[Case]]] = {
    "ops": ops_cases,
    "encoder": encoder_cases,
    "dfn": dfn_cases,
    "decoder": decoder_cases,
    "head": head_cases,
    "loss": loss_cases,
}
MODULES = ("all", *SUITES)


def breakpoint_margin(case: Case) -> float:
    """Smallest distance to a ReLU, max or clamp breakpoint in one forward pass of `case`."""
    with float64(), track_breakpoints() as margins:
        case.fn(ModelParams({name: Tensor(value) for name, value in case.arrays.items()}))
    return min(margins, default=float("inf"))


def draw_case(suite: str, index: int, seed: int, point: int) -> Case:
    """Case `index` of `suite` at the first draw of this point that keeps clear of every kink."""
    for attempt in range(MAX_DRAWS):
        case = SUITES[suite](np.random.default_rng([seed, point, attempt]))[index]
        if breakpoint_margin(case) >= KINK_MARGIN:
            return case
    logger.warning(f"gradcheck {suite}/{case.op}: no draw kept {KINK_MARGIN} clear of a kink")
    return case


def run_case(case: Case, seed: int = 0, tol: float = 1e-4) -> GradCheckReport:
    names = list(case.arrays)

    def closure(*tensors: Tensor) -> Tensor:
        return case.fn(ModelParams(dict(zip(names, tensors))))

    return gradcheck(closure, case.arrays, eps=EPS, tol=tol, max_elements=MAX_ELEMENTS, seed=seed, op=case.op)


def certify(module: str = "all", seed: int = 0, points: int = POINTS) -> List[GradCheckReport]:
    """Run the chosen suite(s) at `points` random points each."""
    if module not in MODULES:
        raise InvalidInputError(f"Unknown gradcheck module '{module}'. Expected one of {MODULES}")
    selected = list(SUITES) if module == "all" else [module]
    reports: List[GradCheckReport] = []
    for name in selected:
        for point in range(points):
            count = len(SUITES[name](np.random.default_rng([seed, point, 0])))
            for index in range(count):
                report = run_case(draw_case(name, index, seed, point), seed=seed + point)
                report.op = f"{name}/{report.op}#{point}"
                reports.append(report)
    failed = [r.op for r in reports if not r.passed]
    logger.info(f"gradcheck {module}: {len(reports) - len(failed)}/{len(reports)} passed")
    if failed:
        logger.warning(f"gradcheck failures: {', '.join(failed)}")
    return reports
