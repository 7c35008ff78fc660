"""Convolution engines: per-neuron stateful scatter and event-driven depth-first.

Depth-first layers keep only a rolling band of input rows. An output pixel is
computed as soon as the raster cursor passes the last position of its
receptive field, thresholded, and sent downstream at once, so the next layer
starts before this one has seen the whole frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .. import kernels
from ..core_model import (
    WORD_BITS,
    CoreVariant,
    CostCounters,
    TaskCost,
    DF_EVENT_INSTR,
    event_control_cost,
    fire_control_cost,
    hazard_stalls,
    weight_words,
)
from ..netmodel import LayerSpec, NumericFault, fire_mask


class RasterOrderError(ValueError):
    """A depth-first layer received an event behind its raster cursor."""


@dataclass(frozen=True)
class PixelEvent:
    y: int
    x: int
    c: int
    value: float  # 1.0 for a binary spike


@dataclass
class LineBufferState:
    """Rolling input rows of one depth-first conv layer plus its emission cursor."""

    spec: LayerSpec
    kernel: np.ndarray  # (k, k, c_in, c_out) float32
    input_bits: int = WORD_BITS
    rows: dict[int, np.ndarray] = field(default_factory=dict)
    cursor: int = -1  # last raster position received
    next_out: int = 0  # raster index of the next output pixel to complete
    words: int = 0
    peak_words: int = 0
    column: np.ndarray = field(init=False)

    def __post_init__(self):
        s = self.spec
        if s.kind != "conv":
            raise ValueError("line buffers belong to conv layers")
        self.column = np.zeros(s.c_out, dtype=np.float32)

    @property
    def row_words(self) -> int:
        s = self.spec
        return ceil(s.w * s.c_in * self.input_bits / WORD_BITS)

    @property
    def bound_words(self) -> int:
        """Tracker limit: (k-1) full rows, the row in progress, one c_out column."""
        s = self.spec
        return s.k * self.row_words + s.c_out

    @property
    def done(self) -> bool:
        return self.next_out >= self.spec.h_out * self.spec.w_out

    def last_position(self, out_index: int) -> int:
        """Raster position (y, x, c flattened) of the last input in an output's receptive field."""
        s = self.spec
        oy, ox = divmod(out_index, s.w_out)
        y = oy * s.stride + s.k - 1
        x = ox * s.stride + s.k - 1
        return (y * s.w + x) * s.c_in + s.c_in - 1

    def _update_words(self) -> None:
        self.words = len(self.rows) * self.row_words + self.spec.c_out
        if self.words > self.peak_words:
            self.peak_words = self.words
        if self.words > self.bound_words:
            raise AssertionError(
                f"line buffer holds {self.words} words, bound is {self.bound_words}"
            )

    def reset(self) -> None:
        self.rows.clear()
        self.cursor = -1
        self.next_out = 0
        self.words = 0


@dataclass
class DepthFirstResult:
    emitted: list[PixelEvent]
    pre: list[tuple[int, int, np.ndarray]]  # (oy, ox, integrated column) per computed pixel
    cost: TaskCost
    synaptic_ops: int = 0


def _window(state: LineBufferState, oy: int, ox: int) -> np.ndarray:
    s = state.spec
    win = np.zeros((s.k, s.k, s.c_in), dtype=np.float32)
    y0, x0 = oy * s.stride, ox * s.stride
    for ky in range(s.k):
        row = state.rows.get(y0 + ky)
        if row is not None:
            win[ky] = row[x0 : x0 + s.k]
    return win


def output_pixel_cost(variant: CoreVariant, spec: LayerSpec, nnz: int, graded_input: bool, input_bits: int, emitted: int) -> TaskCost:
    """One output pixel: window read, nnz weight columns, c_out column integrate and fire."""
    c = event_control_cost(variant, spec.c_out, nnz, graded_input)
    window_words = spec.k * ceil(spec.k * spec.c_in * input_bits / WORD_BITS)
    c.account("dmem_read_word", window_words + nnz * weight_words(spec.c_out, spec.weight_scheme.bits))
    c.account("dmem_write_word", spec.c_out)
    c.add(fire_control_cost(variant, spec.c_out, emitted))
    c.account("dmem_read_word", spec.c_out)
    c.account("dmem_write_word", spec.c_out)
    return TaskCost(c, hazard_stalls(variant, 1))


def store_event_cost(input_bits: int) -> CostCounters:
    c = CostCounters().account("riscv_instr", DF_EVENT_INSTR).account("imem_fetch", DF_EVENT_INSTR)
    if input_bits < WORD_BITS:
        c.account("dmem_read_word", 1)  # read-modify-write of the packed word
    return c.account("dmem_write_word", 1)


def _complete_until(state: LineBufferState, limit: int, variant: CoreVariant, graded_input: bool,
                    out: DepthFirstResult) -> None:
    """Compute every pending output whose receptive field ends at or before ``limit``."""
    s = state.spec
    total = s.h_out * s.w_out
    while state.next_out < total and state.last_position(state.next_out) <= limit:
        oy, ox = divmod(state.next_out, s.w_out)
        win = _window(state, oy, ox)
        nnz = int(np.count_nonzero(win))
        if nnz:
            col = state.column
            if kernels.conv_pixel(win, state.kernel, col):
                raise NumericFault(f"conv output ({oy}, {ox}) overflowed")
            pre = col.copy()
            fired = np.flatnonzero(fire_mask(pre, s))
            for co in fired:
                out.emitted.append(PixelEvent(oy, ox, int(co), 1.0 if not s.graded else float(pre[co])))
            out.pre.append((oy, ox, pre))
            col[:] = 0
            cost = output_pixel_cost(variant, s, nnz, graded_input, state.input_bits, int(fired.size))
            out.cost.counters.add(cost.counters)
            out.cost.stall_cycles += cost.stall_cycles
            out.synaptic_ops += nnz * s.c_out
        state.next_out += 1
    # rows above the next pending output's receptive field are no longer needed
    if state.next_out < total:
        keep_from = (state.next_out // s.w_out) * s.stride
    else:
        keep_from = s.h
    for r in [r for r in state.rows if r < keep_from]:
        del state.rows[r]


def depth_first_conv_event(
    state: LineBufferState,
    spec: LayerSpec,
    ev: PixelEvent,
    variant: CoreVariant,
    graded_input: bool = True,
) -> DepthFirstResult:
    """Store one raster-ordered input event and emit every output it completes."""
    s = spec
    if not (0 <= ev.y < s.h and 0 <= ev.x < s.w and 0 <= ev.c < s.c_in):
        raise RasterOrderError(f"event ({ev.y}, {ev.x}, {ev.c}) outside a {s.h}x{s.w}x{s.c_in} input")
    pos = (ev.y * s.w + ev.x) * s.c_in + ev.c
    if pos <= state.cursor:
        cy, rest = divmod(state.cursor, s.w * s.c_in)
        raise RasterOrderError(
            f"event (y={ev.y}, x={ev.x}, c={ev.c}) arrived after (y={cy}, x={rest // s.c_in}, c={rest % s.c_in})"
        )
    out = DepthFirstResult([], [], TaskCost(store_event_cost(state.input_bits), 0))
    # outputs whose fields end before this event cannot change any more
    _complete_until(state, pos - 1, variant, graded_input, out)
    row = state.rows.get(ev.y)
    if row is None:
        row = state.rows[ev.y] = np.zeros((s.w, s.c_in), dtype=np.float32)
    row[ev.x, ev.c] = ev.value
    state.cursor = pos
    state._update_words()
    _complete_until(state, pos, variant, graded_input, out)
    state._update_words()
    return out


def finish_frame(state: LineBufferState, variant: CoreVariant, graded_input: bool = True) -> DepthFirstResult:
    """End of frame: complete every remaining output and release the buffer."""
    out = DepthFirstResult([], [], TaskCost())
    _complete_until(state, state.spec.h * state.spec.w * state.spec.c_in, variant, graded_input, out)
    state.reset()
    return out


def stateful_event_cost(variant: CoreVariant, spec: LayerSpec, touched: int, graded_input: bool) -> TaskCost:
    """Scatter of one input event into ``touched`` output positions of every channel."""
    n = touched * spec.c_out
    if n == 0:
        c = CostCounters().account("riscv_instr", DF_EVENT_INSTR).account("imem_fetch", DF_EVENT_INSTR)
        return TaskCost(c, 0)
    c = event_control_cost(variant, n, 1, graded_input)
    c.account("dmem_read_word", n + touched * weight_words(spec.c_out, spec.weight_scheme.bits))
    c.account("dmem_write_word", n)
    return TaskCost(c, hazard_stalls(variant, 1))


def stateful_conv_event(
    states: np.ndarray,
    kernel: np.ndarray,
    spec: LayerSpec,
    ev: PixelEvent,
    variant: CoreVariant,
    graded_input: bool = True,
) -> TaskCost:
    """Add one input event to the persistent (h_out, w_out, c_out) state map."""
    touched, bad = kernels.scatter_conv_event(
        states, kernel, ev.y, ev.x, ev.c, ev.value, spec.stride, not graded_input
    )
    if bad:
        raise NumericFault(f"conv state overflow after event ({ev.y}, {ev.x}, {ev.c})")
    cost = stateful_event_cost(variant, spec, touched, graded_input)
    cost.synaptic_ops = touched * spec.c_out
    return cost


def stateful_peak_words(spec: LayerSpec) -> int:
    return spec.h_out * spec.w_out * spec.c_out
