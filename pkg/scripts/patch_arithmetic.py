#!/usr/bin/env python3
"""Patch-count arithmetic for the training set: per slice, per subject, per cohort."""
import argparse

import numpy as np

from asldld.data import extract_patches, patch_count, training_slice_indices


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--height", type=int, default=91)
    p.add_argument("--width", type=int, default=109)
    p.add_argument("--slices", type=int, default=91, help="axial slices per volume")
    p.add_argument("--patch", type=int, default=16)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--subjects", type=int, default=240)
    args = p.parse_args()

    per_slice = patch_count(args.height, args.width, args.patch, args.stride)
    enumerated = len(extract_patches(*(np.zeros((args.height, args.width)),) * 3,
                                     size=args.patch, stride=args.stride))
    slices = len(training_slice_indices(args.slices))
    print(f"patches per {args.height}x{args.width} slice: {per_slice} (enumerated: {enumerated})")
    print(f"training slices per subject: {slices}")
    print(f"patches per subject: {slices * per_slice}")
    print(f"{args.subjects} subjects: {args.subjects * slices} slices, {args.subjects * slices * per_slice} patches")


if __name__ == "__main__":
    main()
