"""Actual sizes of symbolic values held on the stack and in registers.

The register file is atomic at the formula level (a 2-byte value loaded into
``eax`` makes the whole of ``rax`` symbolic), so the formula alone cannot tell
how many bytes of a register or stack slot are significant.  These maps keep
that size, in bytes, for symbolic values only; a concrete write erases the
entry.

The stack map is a stack of per-call frames keyed by the absolute address of a
value's lowest byte.  Lookups use the current frame; a miss at or above the
frame's entry ``rsp`` (the caller's outgoing argument area) falls through to
the immediate parent frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .isa import RegisterSlice

CONVERSION_SIZE = {"cbw": 1, "cwde": 2, "cdqe": 4}


@dataclass
class Frame:
    entry_sp: int
    sizes: dict[int, int] = field(default_factory=dict)


class ShadowStack:
    def __init__(self, initial_sp: int):
        self.frames = [Frame(initial_sp)]

    @property
    def current(self) -> Frame:
        return self.frames[-1]

    @property
    def depth(self) -> int:
        return len(self.frames)

    def push_frame(self, entry_sp: int) -> None:
        self.frames.append(Frame(entry_sp))

    def pop_frame(self) -> None:
        if len(self.frames) > 1:
            self.frames.pop()

    def lookup(self, addr: int) -> int | None:
        frame = self.current
        if addr in frame.sizes:
            return frame.sizes[addr]
        if len(self.frames) > 1 and addr >= frame.entry_sp:
            return self.frames[-2].sizes.get(addr)
        return None

    def _frames_for(self, addr: int) -> list[Frame]:
        frames = [self.current]
        if len(self.frames) > 1 and addr >= self.current.entry_sp:
            frames.append(self.frames[-2])
        return frames

    def clear(self, addr: int, size: int) -> None:
        """Drop entries overlapping ``[addr, addr + size)``."""
        for frame in self._frames_for(addr):
            stale = [a for a, s in frame.sizes.items() if a < addr + size and a + s > addr]
            for a in stale:
                del frame.sizes[a]

    def set(self, addr: int, size: int) -> None:
        assert size in (1, 2, 4, 8), size
        self.clear(addr, size)
        self.current.sizes[addr] = size


class ShadowRegisterMap(dict):
    """Full register name -> significant size in bytes."""

    def lookup(self, reg: str) -> int | None:
        return self.get(reg)

    def drop(self, reg: str) -> None:
        self.pop(reg, None)


class ShadowTracker:
    """Update rules for the shadow stack and shadow registers."""

    def __init__(self, initial_sp: int):
        self.stack = ShadowStack(initial_sp)
        self.regs = ShadowRegisterMap()

    # -- stack side ---------------------------------------------------------

    def _source_size(self, src, src_size: int) -> int:
        if isinstance(src, RegisterSlice):
            tracked = self.regs.lookup(src.reg)
        else:
            tracked = self.stack.lookup(src)
        return src_size if tracked is None else min(tracked, src_size)

    def on_store(self, addr: int, src, src_size: int, src_symbolic: bool) -> None:
        """mov/movsx/movzx with a memory destination. ``src`` is a slice or None."""
        if not src_symbolic:
            self.stack.clear(addr, src_size)
            return
        if isinstance(src, RegisterSlice):
            self.stack.set(addr, self._source_size(src, src_size))
        else:
            self.stack.set(addr, src_size)

    def on_push(self, sp_after: int, src, src_size: int, src_symbolic: bool) -> None:
        """``src`` is a register slice, a source address (memory push) or None."""
        if not src_symbolic:
            self.stack.clear(sp_after, src_size)
        elif src is None:
            self.stack.set(sp_after, src_size)
        else:
            self.stack.set(sp_after, self._source_size(src, src_size))

    def on_input(self, addr: int, size: int) -> None:
        """A read intrinsic stored a fresh ``size``-byte variable at ``addr``."""
        self.stack.set(addr, size)

    def on_concrete_store(self, addr: int, size: int) -> None:
        self.stack.clear(addr, size)

    # -- register side -------------------------------------------------------

    def on_load(self, dest: RegisterSlice, src, src_size: int, src_symbolic: bool) -> None:
        """mov/movsx/movzx with a register destination.

        ``src`` is a register slice or the source memory address. The recorded
        size never exceeds the source operand size, so extensions do not widen
        it.
        """
        if not src_symbolic:
            self.regs.drop(dest.reg)
        else:
            self.regs[dest.reg] = self._source_size(src, src_size)

    def on_pop(self, dest: RegisterSlice, sp_before: int, value_symbolic: bool) -> None:
        size = self.stack.lookup(sp_before) if value_symbolic else None
        if size is None:
            self.regs.drop(dest.reg)
        else:
            self.regs[dest.reg] = min(size, dest.size)

    def on_conversion(self, mnemonic: str, rax_symbolic: bool) -> None:
        if rax_symbolic:
            self.regs["rax"] = CONVERSION_SIZE[mnemonic]
        else:
            self.regs.drop("rax")

    def on_other_write(self, written: dict[str, tuple[int, bool]]) -> None:
        """``written`` maps register -> (destination size, result symbolic)."""
        for reg, (size, symbolic) in written.items():
            if symbolic:
                self.regs[reg] = size
            else:
                self.regs.drop(reg)

    def on_modeled_function_return(self, returns_value: bool, rax_symbolic: bool,
                                   width_bytes: int = 8) -> None:
        if returns_value and rax_symbolic:
            self.regs["rax"] = width_bytes
        else:
            self.regs.drop("rax")

    # -- frames --------------------------------------------------------------

    def on_call(self, entry_sp: int) -> None:
        self.stack.push_frame(entry_sp)

    def on_ret(self) -> None:
        self.stack.pop_frame()

    def dump(self) -> str:
        regs = ",".join(f"{r}:{s}" for r, s in sorted(self.regs.items()))
        frames = " ".join(
            f"frame{i}{{" + ",".join(f"{a:#x}:{s}" for a, s in sorted(f.sizes.items())) + "}"
            for i, f in enumerate(self.stack.frames))
        return f"shadow: regs{{{regs}}} {frames}"
