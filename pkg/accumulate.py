"""
Recursive long-range flow accumulation.

Forward accumulation grows F_{1,t+1} from F_{1,t}, so the occlusion interval it
must handle grows with t. Backward accumulation grows F_{t-1,N} from F_{t,N}
aligned along the local flow F_{t-1,t}, so every mask it consumes spans a single
frame step.
"""

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple
from loguru import logger

from flow_core import (
    FlowField,
    FlowSequence,
    Interval,
    InvalidArgumentError,
    OcclusionMask,
    compose,
    magnitude,
    occlusion_proportion,
    select_by_mask,
)
from flow_io import save_flo, save_flow_png, save_mask_png
from occlusion import MissingInputError, OccDetector, OccSolver, SolveContext


DIRECTIONS = ("forward", "backward")

BlendHook = Callable[[int, Interval, FlowField], FlowField]


@dataclass(frozen=True)
class AccumulationStep:
    """
    One iteration of a driver.

    Args:
        t: loop index
        interval: frames spanned by the mask consumed at this step
        target: frames spanned by the flow produced at this step
        alpha: occlusion proportion of the consumed mask
        filled: pixels whose value came from the solver
        flow, mask: the produced flow and consumed mask, None in streaming mode
    """

    t: int
    interval: Interval
    target: Interval
    alpha: float
    filled: int
    flow: Optional[FlowField] = None
    mask: Optional[OcclusionMask] = None


@dataclass(frozen=True)
class AccumulationTrace:
    direction: str
    length: int
    steps: Tuple[AccumulationStep, ...]
    final: FlowField

    def intermediates(self) -> Dict[Interval, FlowField]:
        return {s.target: s.flow for s in self.steps if s.flow is not None}

    @property
    def total_alpha(self) -> float:
        return sum(s.alpha for s in self.steps)

    @property
    def total_filled(self) -> int:
        return sum(s.filled for s in self.steps)


def _check_prerequisites(
    seq: FlowSequence, detector: OccDetector, solver: OccSolver, direction: str
) -> None:
    n = seq.length
    if n < 3:
        raise InvalidArgumentError(
            "accumulation needs at least 3 frames, sequence %r has %d" % (seq.name, n)
        )
    if detector.needs_backward and not seq.has_backward:
        raise MissingInputError(
            "consistency detector needs backward local flows, sequence %r has none" % seq.name
        )
    if direction == "forward":
        mask_keys = [(1, t) for t in range(2, n)]
        target_keys = [(1, t + 1) for t in range(2, n)]
    else:
        mask_keys = [(t - 1, t) for t in range(n - 1, 1, -1)]
        target_keys = [(t - 1, n) for t in range(n - 1, 1, -1)]
    if detector.needs_masks:
        missing = [k for k in mask_keys if k not in seq.occ_masks]
        if missing:
            raise MissingInputError(
                "sequence %r lacks ground-truth masks %s"
                % (seq.name, ", ".join("O_%d,%d" % k for k in missing))
            )
    if solver.needs_reference:
        missing = [k for k in target_keys if k not in seq.reference_flows]
        if missing:
            raise MissingInputError(
                "sequence %r lacks reference flows %s"
                % (seq.name, ", ".join("F_%d,%d" % k for k in missing))
            )


def _step(
    t: int,
    interval: Interval,
    target: Interval,
    leader: FlowField,
    follower: FlowField,
    mask: OcclusionMask,
    velocity: FlowField,
    remaining_steps: int,
    seq: FlowSequence,
    solver: OccSolver,
    blend: Optional[BlendHook],
) -> Tuple[FlowField, AccumulationStep]:
    composed = compose(leader, follower)
    ctx = SolveContext(
        target=target,
        occ=mask,
        composed=composed,
        velocity=velocity,
        remaining_steps=remaining_steps,
        reference=seq.reference_flows.get(target),
    )
    result = select_by_mask(composed, mask, solver.solve(ctx))
    if blend is not None:
        result = blend(t, target, result)
    alpha = occlusion_proportion(mask)
    logger.debug(
        "{} t={} O_{},{} alpha={:.4f} -> F_{},{}",
        seq.name or "<seq>", t, interval[0], interval[1], alpha, target[0], target[1],
    )
    return result, AccumulationStep(t, interval, target, alpha, mask.count(), result, mask)


def _strip(step: AccumulationStep) -> AccumulationStep:
    return AccumulationStep(step.t, step.interval, step.target, step.alpha, step.filled)


def accumulate_forward(
    seq: FlowSequence,
    detector: OccDetector,
    solver: OccSolver,
    keep_intermediates: bool = True,
    blend: Optional[BlendHook] = None,
) -> AccumulationTrace:
    """
    For t = 2 .. N-1: F_{1,t+1} = F_{1,t} (+) F_{t,t+1}, with pixels occluded
    over (1, t) filled by the solver.

    With the consistency detector the reverse flow F_{t,1} is chained from the
    backward locals without occlusion handling.
    """
    _check_prerequisites(seq, detector, solver, "forward")
    n = seq.length
    current = seq.local(1)
    reverse: Optional[FlowField] = None
    steps: List[AccumulationStep] = []
    for t in range(2, n):
        if detector.needs_backward:
            back = seq.backward_local(t - 1)
            reverse = back if reverse is None else compose(back, reverse)
        interval = (1, t)
        mask = detector.detect(interval, current, reverse, seq.occ_masks)
        current, step = _step(
            t,
            interval,
            (1, t + 1),
            current,
            seq.local(t),
            mask,
            seq.local(1),
            t,
            seq,
            solver,
            blend,
        )
        steps.append(step if keep_intermediates else _strip(step))
    return AccumulationTrace("forward", n, tuple(steps), current)


def accumulate_backward(
    seq: FlowSequence,
    detector: OccDetector,
    solver: OccSolver,
    keep_intermediates: bool = True,
    blend: Optional[BlendHook] = None,
) -> AccumulationTrace:
    """
    For t = N-1 .. 2: F_{t-1,N} = F_{t-1,t} (+) F_{t,N}, with pixels occluded
    over the single step (t-1, t) filled by the solver.
    """
    _check_prerequisites(seq, detector, solver, "backward")
    n = seq.length
    current = seq.local(n - 1)
    steps: List[AccumulationStep] = []
    for t in range(n - 1, 1, -1):
        leader = seq.local(t - 1)
        reverse = seq.backward_local(t - 1) if detector.needs_backward else None
        interval = (t - 1, t)
        mask = detector.detect(interval, leader, reverse, seq.occ_masks)
        current, step = _step(
            t,
            interval,
            (t - 1, n),
            leader,
            current,
            mask,
            leader,
            n - t + 1,
            seq,
            solver,
            blend,
        )
        steps.append(step if keep_intermediates else _strip(step))
    return AccumulationTrace("backward", n, tuple(steps), current)


def accumulate(
    seq: FlowSequence,
    direction: str,
    detector: OccDetector,
    solver: OccSolver,
    keep_intermediates: bool = True,
    blend: Optional[BlendHook] = None,
) -> AccumulationTrace:
    if direction == "forward":
        return accumulate_forward(seq, detector, solver, keep_intermediates, blend)
    if direction == "backward":
        return accumulate_backward(seq, detector, solver, keep_intermediates, blend)
    raise InvalidArgumentError(
        "direction must be one of %s, got %r" % (", ".join(DIRECTIONS), direction)
    )


def per_step_occlusion_series(trace: AccumulationTrace) -> List[Tuple[int, float]]:
    return [(s.t, s.alpha) for s in trace.steps]


def summarize_trace(trace: AccumulationTrace) -> Dict:
    return {
        "direction": trace.direction,
        "frames": trace.length,
        "steps": [
            {
                "t": s.t,
                "interval": list(s.interval),
                "target": list(s.target),
                "alpha": s.alpha,
                "filled": s.filled,
            }
            for s in trace.steps
        ],
        "total_alpha": trace.total_alpha,
        "total_filled": trace.total_filled,
    }


def save_trace(trace: AccumulationTrace, directory: str) -> None:
    """
    Writes final.flo, one flow_%03d_%03d.flo per retained intermediate, one
    mask_%03d_%03d.png per retained mask and trace.json. Every .flo gets a
    colour-coded .png twin sharing one magnitude scale across the trace.
    """
    os.makedirs(directory, exist_ok=True)
    flows = [trace.final] + [s.flow for s in trace.steps if s.flow is not None]
    scale = max(float(magnitude(f).max()) for f in flows)
    save_flo(os.path.join(directory, "final.flo"), trace.final)
    save_flow_png(os.path.join(directory, "final.png"), trace.final, scale)
    for s in trace.steps:
        if s.flow is not None:
            name = "flow_%03d_%03d" % s.target
            save_flo(os.path.join(directory, name + ".flo"), s.flow)
            save_flow_png(os.path.join(directory, name + ".png"), s.flow, scale)
        if s.mask is not None:
            save_mask_png(os.path.join(directory, "mask_%03d_%03d.png" % s.interval), s.mask)
    with open(os.path.join(directory, "trace.json"), "w", encoding="utf-8") as f:
        json.dump(summarize_trace(trace), f, indent=2)
