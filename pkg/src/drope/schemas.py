"""JSON Schemas for the machine-readable reports the CLI emits.

The ``generated_at`` header field is the only non-deterministic content;
consumers comparing reports should drop it first.
"""

VERIFY_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "seed", "trials", "fault_injection",
                 "properties", "all_passed"],
    "properties": {
        "schema_version": {"const": 1},
        "generated_at": {"type": "string"},
        "seed": {"type": "integer"},
        "trials": {"type": "integer", "minimum": 1},
        "fault_injection": {"type": ["string", "null"]},
        "all_passed": {"type": "boolean"},
        "properties": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "trials", "max_error", "tolerance", "passed"],
                "properties": {
                    "name": {"type": "string"},
                    "trials": {"type": "integer", "minimum": 1},
                    "max_error": {"type": "number"},
                    "tolerance": {"type": "number"},
                    "passed": {"type": "boolean"},
                    "detail": {"type": "string"},
                },
            },
        },
    },
}

PROFILE_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "width_convention", "rows"],
    "properties": {
        "schema_version": {"const": 1},
        "generated_at": {"type": "string"},
        "width_convention": {"type": "string"},
        "rows": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": [
                    "variant", "n_tokens", "n_heads", "d_k", "d_v",
                    "qkv_scalars", "pairwise_scalars", "embedded_scalars",
                    "total_scalars", "total_scalars_in_place",
                    "flops_scores", "flops_weighted_sum", "flops_embedding",
                    "flops_rpe_encoders", "flops_total",
                ],
            },
        },
    },
}

ROLLOUT_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "seed", "samples", "horizon_steps", "dt",
                 "policy", "variant", "trajectory_files"],
    "properties": {
        "schema_version": {"const": 1},
        "generated_at": {"type": "string"},
        "seed": {"type": "integer"},
        "samples": {"type": "integer", "minimum": 1},
        "horizon_steps": {"type": "integer", "minimum": 1},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "policy": {"type": "string"},
        "variant": {"type": "string"},
        "min_ade_per_agent": {"type": ["array", "null"],
                              "items": {"type": "number"}},
        "min_ade_mean": {"type": ["number", "null"]},
        "trajectory_files": {"type": "array", "items": {"type": "string"}},
    },
}
