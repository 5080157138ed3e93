"""Regenerate the golden fixture files in this directory.

Written against the published NIfTI-1 header layout and the PGM/raw text
formats, independently of the Rust code.
"""
import struct
from pathlib import Path

HERE = Path(__file__).parent


def nifti(dims, datatype, bitpix, pixdim, body, endian="<", slope=0.0, inter=0.0, sform=None, qform=None):
    h = bytearray(348)
    struct.pack_into(endian + "i", h, 0, 348)
    dim = [len(dims)] + list(dims) + [1] * (7 - len(dims))
    struct.pack_into(endian + "8h", h, 40, *dim)
    struct.pack_into(endian + "h", h, 70, datatype)
    struct.pack_into(endian + "h", h, 72, bitpix)
    pd = [1.0] + list(pixdim) + [1.0] * (7 - len(pixdim))
    struct.pack_into(endian + "8f", h, 76, *pd)
    struct.pack_into(endian + "f", h, 108, 352.0)
    struct.pack_into(endian + "ff", h, 112, slope, inter)
    if qform is not None:
        struct.pack_into(endian + "h", h, 252, 1)
        struct.pack_into(endian + "6f", h, 256, *qform)
    if sform is not None:
        struct.pack_into(endian + "h", h, 254, 2)
        for r, off in enumerate((280, 296, 312)):
            struct.pack_into(endian + "4f", h, off, *sform[r])
    h[344:348] = b"n+1\x00"
    return bytes(h) + b"\x00" * 4 + body


def main():
    # 2x2x2 labels, x fastest, value = x + 2y + 4z.
    (HERE / "labels_u8.nii").write_bytes(
        nifti((2, 2, 2), 2, 8, (0.5, 1.0, 2.0), bytes(range(8)),
              sform=[[0.5, 0, 0, -10], [0, 1, 0, 20], [0, 0, 2, 30]])
    )
    # Big-endian i16 with slope 0.5 and intercept 1: stored -4 0 6 100 -200 8.
    (HERE / "scaled_i16_be.nii").write_bytes(
        nifti((3, 2, 1), 4, 16, (1.0, 1.0, 1.0), struct.pack(">6h", -4, 0, 6, 100, -200, 8), endian=">",
              slope=0.5, inter=1.0)
    )
    # 1x2x1 coordinate field, vector components on the fifth axis.
    coords = [0.25, -0.5, 1.0, 0.75, -1.0, 0.0]
    (HERE / "coords_f32.nii").write_bytes(
        nifti((1, 2, 1, 1, 3), 16, 32, (2.0, 2.0, 2.0), struct.pack("<6f", *coords),
              qform=(0.0, 0.0, 1.0, 5.0, 6.0, 7.0))
    )
    # 3x2x1 intensity volume in the raw+sidecar format.
    (HERE / "intensity_f32.hdr").write_text(
        "format = slabrecon-raw-1\n"
        "dims = 3 2 1\n"
        "spacing = 1.5 1.5 3\n"
        "channels = 1\n"
        "dtype = f32\n"
        "kind = intensity\n"
        "byte_order = little\n"
    )
    (HERE / "intensity_f32.raw").write_bytes(struct.pack("<6f", 0.0, 0.5, 1.0, -1.5, 2.25, 1e-3))
    # 3x2 16-bit grey image, big-endian samples.
    (HERE / "gray16.pgm").write_bytes(b"P5\n3 2\n65535\n" + struct.pack(">6H", 0, 1, 256, 4095, 65534, 65535))
    # 4x1 binary mask.
    (HERE / "mask8.pgm").write_bytes(b"P5\n4 1\n255\n" + bytes([0, 255, 255, 0]))


if __name__ == "__main__":
    main()
