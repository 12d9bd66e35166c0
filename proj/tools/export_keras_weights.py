#!/usr/bin/env python3
"""Export a Keras application encoder (include_top=False) to a .cxw weight bundle.

Pretrained ImageNet weights need network access the first time Keras fetches
them; run this on such a machine and copy the resulting file into the weights
directory (default ~/.cache/cytoxai, or $CYTOXAI_WEIGHTS_DIR).

    python3 tools/export_keras_weights.py --arch resnet50 --out resnet50_notop.cxw

--random-seed builds the graph with weights=None and seeded random values
instead (batch-norm statistics included), and --reference writes a JSON file
with one preprocessed forward pass, used by the cross-check test.
"""

import argparse
import json
import os
import struct
import sys

import numpy as np

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")

ARCHS = {
    "resnet50": ("ResNet50", "resnet50"),
    "mobilenetv2": ("MobileNetV2", "mobilenet_v2"),
    "densenet169": ("DenseNet169", "densenet"),
    "vgg16": ("VGG16", "vgg16"),
    "vgg19": ("VGG19", "vgg19"),
}


def to_bundle_layout(kind, index, value):
    if kind == "Conv2D" and index == 0:
        return np.transpose(value, (3, 2, 0, 1))  # (kh,kw,in,out) -> (out,in,kh,kw)
    if kind == "DepthwiseConv2D" and index == 0:
        return np.transpose(value[..., 0], (2, 0, 1))[:, None]  # (kh,kw,C,1) -> (C,1,kh,kw)
    return value


WEIGHT_NAMES = {
    "Conv2D": ["kernel", "bias"],
    "DepthwiseConv2D": ["kernel", "bias"],
    "BatchNormalization": ["gamma", "beta", "moving_mean", "moving_variance"],
    "Dense": ["kernel", "bias"],
}


def input_layer_name(name):
    return "input_layer" if name.startswith("input_layer") else name


def randomize(model, seed):
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        kind = type(layer).__name__
        values = layer.get_weights()
        if not values:
            continue
        if kind == "BatchNormalization":
            c = values[0].shape
            values = [
                rng.uniform(0.5, 1.5, c),
                rng.normal(0.0, 0.1, c),
                rng.normal(0.0, 0.1, c),
                rng.uniform(0.5, 1.5, c),
            ]
        else:
            out = []
            for v in values:
                fan_in = int(np.prod(v.shape[:-1])) if v.ndim > 1 else 1
                if kind == "DepthwiseConv2D" and v.ndim == 4:
                    fan_in = v.shape[0] * v.shape[1]
                scale = np.sqrt(2.0 / max(fan_in, 1)) if v.ndim > 1 else 0.05
                out.append(rng.normal(0.0, scale, v.shape))
            values = out
        layer.set_weights([v.astype(np.float32) for v in values])


def write_bundle(path, manifest, model):
    tensors, chunks, offset = [], [], 0
    for layer in model.layers:
        kind = type(layer).__name__
        values = layer.get_weights()
        names = WEIGHT_NAMES.get(kind)
        if not values:
            continue
        if names is None:
            sys.exit(f"unsupported weighted layer {layer.name} ({kind})")
        for i, v in enumerate(values):
            arr = np.ascontiguousarray(to_bundle_layout(kind, i, v), dtype="<f4")
            tensors.append({"layer": input_layer_name(layer.name), "weight": names[i],
                            "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.size
    header = json.dumps({"manifest": manifest, "tensors": tensors}).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"CXWB")
        f.write(struct.pack("<IQ", 1, len(header)))
        f.write(header)
        for c in chunks:
            f.write(c)
    os.replace(tmp, path)


def reference_input(size):
    y, x, c = np.meshgrid(np.arange(size), np.arange(size), np.arange(3), indexing="ij")
    return (((x * 7 + y * 13 + c * 29) % 256) / 255.0).astype(np.float32)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--arch", required=True, choices=sorted(ARCHS))
    ap.add_argument("--out", required=True)
    ap.add_argument("--input-size", type=int, default=110)
    ap.add_argument("--random-seed", type=int, default=None)
    ap.add_argument("--reference", default=None)
    args = ap.parse_args()

    import keras

    ctor_name, module_name = ARCHS[args.arch]
    weights = None if args.random_seed is not None else "imagenet"
    shape = (args.input_size, args.input_size, 3)
    model = getattr(keras.applications, ctor_name)(include_top=False, weights=weights, input_shape=shape)
    if args.random_seed is not None:
        randomize(model, args.random_seed)

    manifest = {"architecture": args.arch, "source": "keras.applications",
                "weights": weights or f"random:{args.random_seed}", "input_size": args.input_size}
    write_bundle(args.out, manifest, model)

    if args.reference:
        module = getattr(keras.applications, module_name)
        img = reference_input(args.input_size)
        batch = module.preprocess_input(img[None] * 255.0)
        out = np.asarray(model(batch, training=False))[0]
        with open(args.reference, "w") as f:
            json.dump({"input_hwc": img.ravel().tolist(), "output_chw": np.transpose(out, (2, 0, 1)).ravel().tolist(),
                       "output_shape_chw": [out.shape[2], out.shape[0], out.shape[1]]}, f)


if __name__ == "__main__":
    main()
