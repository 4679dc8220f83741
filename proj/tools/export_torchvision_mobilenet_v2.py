#!/usr/bin/env python3
"""Write torchvision MobileNetV2 weights as a .wts archive.

The archive keeps torchvision key names; `ftseg convert-weights` renames them.
Use --pretrained for the ImageNet checkpoint (needs network access the first
time). Without it the model is randomly initialised and its BatchNorm running
statistics are perturbed, which is what the parity test wants.

--probe writes a second archive with a seeded input and the five encoder taps
(outputs of features.1, 3, 6, 13 and 18) computed in eval mode.
"""

import argparse
import json
import struct
import zlib

import numpy as np
import torch
import torchvision

TAP_FEATURES = (1, 3, 6, 13, 18)


def write_wts(path, tensors, metadata=None):
    entries, chunks, offset = [], [], 0
    for name, array in tensors:
        a = np.ascontiguousarray(array, dtype="<f4")
        raw = a.tobytes()
        entries.append({"name": name, "dtype": "F32", "shape": list(a.shape) or [1], "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps(
        {"tensors": entries, "payload_crc32": zlib.crc32(payload) & 0xFFFFFFFF, "metadata": metadata or {}},
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as f:
        f.write(b"FTSW")
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", help="destination .wts")
    ap.add_argument("--pretrained", action="store_true", help="ImageNet weights instead of random init")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--probe", help="also write input + encoder taps to this .wts")
    ap.add_argument("--probe-size", type=int, default=64)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    weights = torchvision.models.MobileNet_V2_Weights.IMAGENET1K_V1 if args.pretrained else None
    model = torchvision.models.mobilenet_v2(weights=weights).eval()
    if not args.pretrained:
        with torch.no_grad():
            for m in model.modules():
                if isinstance(m, torch.nn.BatchNorm2d):
                    m.running_mean.uniform_(-0.2, 0.2)
                    m.running_var.uniform_(0.5, 1.5)
                    m.weight.uniform_(0.5, 1.5)
                    m.bias.uniform_(-0.2, 0.2)

    tensors = [(k, v.detach().numpy()) for k, v in model.state_dict().items() if not k.endswith("num_batches_tracked")]
    write_wts(args.out, tensors, {"source": "torchvision", "torchvision": torchvision.__version__,
                                  "pretrained": args.pretrained})

    if args.probe:
        x = torch.randn(2, 3, args.probe_size, args.probe_size, generator=torch.Generator().manual_seed(args.seed + 1))
        taps, h = [], x
        with torch.no_grad():
            for i, layer in enumerate(model.features):
                h = layer(h)
                if i in TAP_FEATURES:
                    taps.append(h)
        write_wts(args.probe, [("input", x.numpy())] + [(f"tap.{i}", t.numpy()) for i, t in enumerate(taps)])


if __name__ == "__main__":
    main()
