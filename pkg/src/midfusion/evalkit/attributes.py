"""Challenge-attribute schemas of the RGB-T benchmarks."""

LASHER = ("NO", "PO", "TO", "HO", "LI", "HI", "AIV", "OV", "LR", "DEF", "BC", "SA", "TC", "MB", "CM",
          "FL", "FM", "SV", "ARC")
RGBT234 = ("NO", "CM", "HO", "FM", "SV", "PO", "LI", "TC", "BC", "MB", "DEF", "LR")

SCHEMAS = {"lasher": LASHER, "rgbt234": RGBT234}

ATTRIBUTE_NAMES = {
    "NO": "No Occlusion",
    "PO": "Partial Occlusion",
    "TO": "Total Occlusion",
    "HO": "Hyaline Occlusion",
    "LI": "Low Illumination",
    "HI": "High Illumination",
    "AIV": "Abrupt Illumination Variation",
    "OV": "Out-of-View",
    "LR": "Low Resolution",
    "DEF": "Deformation",
    "BC": "Background Clutter",
    "SA": "Similar Appearance",
    "TC": "Thermal Crossover",
    "MB": "Motion Blur",
    "CM": "Camera Moving",
    "FL": "Frame Lost",
    "FM": "Fast Motion",
    "SV": "Scale Variation",
    "ARC": "Aspect Ratio Change",
}


class SchemaError(ValueError):
    pass


def check_flags(flags, schema: str) -> tuple[int, ...]:
    names = SCHEMAS[schema]
    flags = tuple(int(f) for f in flags)
    if len(flags) != len(names):
        raise SchemaError(f"{schema} schema has {len(names)} attributes, got {len(flags)} flags")
    if any(f not in (0, 1) for f in flags):
        raise SchemaError(f"attribute flags must be 0/1, got {flags}")
    return flags
