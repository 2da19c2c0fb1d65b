"""Self-attention key/value capture and replacement.

Instead of reimplementing each attention forward, the key and value
projection layers themselves are wrapped: in ``record`` mode their outputs
are stored, in ``inject`` mode the stored outputs are returned verbatim.
Because every attention implementation consumes ``to_k(x)`` / ``to_v(x)``,
this substitutes the source branch's keys/values exactly while queries stay
on the edited branch.
"""
from __future__ import annotations

import functools

from torch import nn

from dynadrag.backend.lora import iter_attention_modules


class KVInjectionController:
    """Patches the k/v projections of the given attention modules.

    Modes: "off" (pass-through), "record" (store outputs), "inject"
    (return stored outputs). Use as: attach once, then wrap the source
    forward pass in ``record()`` and the edited pass in ``inject()``.
    """

    def __init__(self, attention_modules: dict[str, nn.Module]):
        self.mode = "off"
        self._store: dict[str, object] = {}
        self._patched: list[tuple[nn.Module, object]] = []
        self._modules = attention_modules

    @classmethod
    def for_self_attention(cls, root: nn.Module, name_filter: str = "attn1") -> "KVInjectionController":
        """Controller over submodules whose path contains ``name_filter``
        (diffusers names self-attention blocks ``attn1``); falls back to all
        attention modules when none match."""
        mods = {n: m for n, m in iter_attention_modules(root) if name_filter in n}
        if not mods:
            mods = dict(iter_attention_modules(root))
        return cls(mods)

    def attach(self) -> None:
        for name, attn in self._modules.items():
            for proj in ("to_k", "to_v"):
                layer = getattr(attn, proj)
                key = f"{name}.{proj}"
                original = layer.forward
                layer.forward = functools.partial(self._dispatch, original, key)
                self._patched.append((layer, original))

    def detach(self) -> None:
        for layer, original in self._patched:
            layer.forward = original
        self._patched.clear()
        self._store.clear()

    def _dispatch(self, original, key, x):
        if self.mode == "record":
            out = original(x)
            self._store[key] = out.detach()
            return out
        if self.mode == "inject":
            if key not in self._store:
                raise RuntimeError(f"no recorded keys/values for {key}; run a record pass first")
            return self._store[key]
        return original(x)

    def record(self):
        return _ModeScope(self, "record")

    def inject(self):
        return _ModeScope(self, "inject")

    def clear(self) -> None:
        self._store.clear()


class _ModeScope:
    def __init__(self, controller: KVInjectionController, mode: str):
        self.controller = controller
        self.mode = mode

    def __enter__(self):
        self.prev = self.controller.mode
        self.controller.mode = self.mode
        return self.controller

    def __exit__(self, *exc):
        self.controller.mode = self.prev
        return False
