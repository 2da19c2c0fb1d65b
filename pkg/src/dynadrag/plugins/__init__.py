"""Reference metric plugins implementing the stdin/stdout protocol.

These are lightweight stand-ins so the evaluation harness runs end to end
without large pretrained backbones; production runs should point the
harness at real embedding/perceptual models via the same protocol.
"""
