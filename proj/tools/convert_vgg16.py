#!/usr/bin/env python3
"""Convert torchvision VGG16 weights (conv layers up to pool3) to a model archive.

The C++ extractor expects conv{1..3}_{k}.weight/.bias tensors and the
metadata entry format=vgg16-features.

    python3 tools/convert_vgg16.py --out vgg16_features.bin
    python3 tools/convert_vgg16.py --state-dict vgg16-397923af.pth --out vgg16_features.bin

The first form downloads the ImageNet weights through torchvision. The
second reads a checkpoint you already have. torchvision publishes that file
as vgg16-397923af.pth, and the hex suffix is the start of its SHA-256.
--random writes untrained weights, which is only useful for checking the
file format.
"""

import argparse
import hashlib
import struct
import sys

MAGIC = b"TXERASE\0"
VERSION = 1

# Index of each conv layer inside torchvision's vgg16().features.
LAYERS = {
    "conv1_1": 0, "conv1_2": 2,
    "conv2_1": 5, "conv2_2": 7,
    "conv3_1": 10, "conv3_2": 12, "conv3_3": 14,
}


def write_archive(path, meta, tensors):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))

        def string(s):
            b = s.encode()
            f.write(struct.pack("<I", len(b)))
            f.write(b)

        f.write(struct.pack("<I", len(meta)))
        for k in sorted(meta):
            string(k)
            string(meta[k])
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = tensors[name]
            string(name)
            f.write(struct.pack("<B", 4))
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack("<%di" % arr.ndim, *arr.shape))
            f.write(arr.astype("<f4").tobytes())


def load_state_dict(args):
    import torch
    import torchvision

    if args.state_dict:
        with open(args.state_dict, "rb") as f:
            digest = hashlib.sha256(f.read()).hexdigest()
        print("sha256 %s" % digest, file=sys.stderr)
        return torch.load(args.state_dict, map_location="cpu"), digest
    if args.random:
        torch.manual_seed(args.seed)
        return torchvision.models.vgg16(weights=None).state_dict(), "random-%d" % args.seed
    weights = torchvision.models.VGG16_Weights.IMAGENET1K_V1
    return torchvision.models.vgg16(weights=weights).state_dict(), weights.url


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", required=True, help="archive to write")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--state-dict", help="local torchvision VGG16 .pth file")
    src.add_argument("--random", action="store_true", help="untrained weights")
    p.add_argument("--seed", type=int, default=0, help="seed for --random")
    args = p.parse_args()

    state, source = load_state_dict(args)
    tensors = {}
    for name, idx in LAYERS.items():
        for part in ("weight", "bias"):
            key = "features.%d.%s" % (idx, part)
            if key not in state:
                sys.exit("missing %s in the state dict" % key)
            tensors["%s.%s" % (name, part)] = state[key].detach().cpu().numpy()
    write_archive(args.out, {"format": "vgg16-features", "source": source}, tensors)
    print("wrote %s (%d tensors)" % (args.out, len(tensors)))


if __name__ == "__main__":
    main()
