"""
Output formatters for the pruning CLI.
Makes architectures, profiles and results human-readable on stdout.
"""

import numpy as np

from utils.exceptions import (
    ArchitectureMismatchError,
    ConfigurationError,
    InfeasibleTargetError,
    NumericInstabilityError,
)


def format_flag_table(spec):
    """
    Format the channel flags of an architecture.

    Args:
        spec: NetworkSpec

    Returns:
        Formatted string representation
    """
    output = []
    output.append(f"Architecture: {spec.arch_id} ({spec.num_classes} classes, input {spec.input_shape})")
    output.append(f"Flags: {len(spec.flags)}  c_max: {spec.c_max}")
    output.append("")
    output.append(f"{'flag':<8} {'length':>6}  {'owner':<14} tensors")
    for flag in spec.flags:
        tensors = ", ".join(sorted({b.tensor for b in flag.bindings}))
        output.append(f"{flag.id:<8} {flag.length:>6}  {flag.owner:<14} {tensors}")
    output.append("")
    return "\n".join(output)


def format_profile(profile, spec=None):
    """
    Format a profile, with per-flag retained counts when the spec is known.

    Args:
        profile: Profile
        spec: Optional NetworkSpec of the profile's architecture

    Returns:
        Formatted string representation
    """
    from scripts.profiles import compression_of, retained_count

    output = []
    output.append(f"Profile for {profile.arch} (seed {profile.seed})")
    generator = profile.provenance.get("generator")
    if generator:
        output.append(f"   Generator: {generator}")

    if spec is not None:
        cf, c = compression_of(profile, spec)
        output.append(f"   CF: {cf:.3f}   pruned fraction: {c:.3f}")
        output.append("")
        for flag, beta in zip(spec.flags, profile.betas):
            kept = retained_count(beta, flag.length)
            output.append(f"   {flag.id:<8} beta={beta:.3f}  keeps {kept}/{flag.length}")
    else:
        output.append("   Betas: " + ", ".join(f"{b:.3f}" for b in profile.betas))
    output.append("")
    return "\n".join(output)


def format_prune_result(result, base_accuracy=None):
    """
    Format the outcome of a prune-and-fine-tune job.

    Args:
        result: PruneResult
        base_accuracy: Accuracy of the unpruned network, if known

    Returns:
        Formatted string representation
    """
    output = []
    output.append("=== Prune Result ===")
    output.append(f"Compression factor: {result.cf:.3f}")
    output.append(f"Pruned fraction:    {result.c:.3f}")
    output.append(f"Accuracy:           {result.accuracy:.4f}")
    if base_accuracy is not None:
        output.append(f"Base accuracy:      {base_accuracy:.4f} (delta {result.accuracy - base_accuracy:+.4f})")
    output.append("")
    for fid in result.masks:
        mask = result.masks[fid]
        output.append(f"   {fid:<8} {int(mask.sum())}/{mask.size}")
    output.append("")
    return "\n".join(output)


def format_training_curve(history, limit=20):
    """
    Format per-epoch training metrics or per-iteration PPO statistics.

    Args:
        history: List of metric dicts
        limit: Show at most this many rows (the tail)

    Returns:
        Formatted string representation
    """
    if not history:
        return "No training history."

    rows = history[-limit:]
    columns = list(rows[0].keys())
    output = []
    if len(history) > limit:
        output.append(f"Showing last {limit} of {len(history)} rows")
    output.append("  ".join(f"{c:>12}" for c in columns))
    for row in rows:
        cells = []
        for c in columns:
            value = row[c]
            cells.append(f"{value:>12.4f}" if isinstance(value, float) else f"{value!s:>12}")
        output.append("  ".join(cells))
    return "\n".join(output)


def format_results_summary(rows):
    """
    Summarize result rows per curve: count, CF range, accuracy statistics.

    Args:
        rows: List of ResultRow

    Returns:
        Formatted string representation
    """
    if not rows:
        return "No results found."

    output = []
    output.append(f"Found {len(rows)} result row(s):")
    output.append("")
    curves = {}
    for row in rows:
        curves.setdefault(row.curve, []).append(row)
    for curve, items in sorted(curves.items()):
        cfs = np.array([r.cf for r in items])
        accs = np.array([r.accuracy for r in items])
        best = max(items, key=lambda r: r.accuracy)
        output.append(f"{curve}")
        output.append(f"   Rows: {len(items)}   CF: {cfs.min():.2f} .. {cfs.max():.2f}")
        output.append(f"   Accuracy: mean {accs.mean():.4f}  std {accs.std():.4f}")
        output.append(f"   Best: {best.profile} (CF {best.cf:.2f}, accuracy {best.accuracy:.4f})")
        output.append("")
    return "\n".join(output)


def format_curves(curves):
    """
    Format sweep curves: one block per curve with (CF, mean, std, n) points.
    """
    if not curves:
        return "No curves produced."

    output = []
    for curve, points in curves.items():
        output.append(f"{curve}")
        for cf_target, cf, mean, std, n in points:
            output.append(f"   CF {cf:6.3f} (target {cf_target:g})  accuracy {mean:.4f} +- {std:.4f}  n={n}")
        output.append("")
    return "\n".join(output)


def format_transfer_ranking(ranking):
    """
    Format transferred profiles with their percentile on the target distribution.
    """
    if not ranking:
        return "No profiles were transferred."

    output = []
    output.append(f"Transferred {len(ranking)} profile(s):")
    output.append("")
    for idx, entry in enumerate(ranking, 1):
        percentile = entry["percentile"]
        rank = "no reference in CF window" if percentile is None else f"percentile {percentile:.1f}"
        output.append(f"{idx}. {entry['profile']}")
        output.append(f"   CF {entry['cf']:.3f}  accuracy {entry['accuracy']:.4f}  {rank}")
        if entry["window_median"] is not None:
            output.append(f"   Window: {entry['window_size']} profiles, median {entry['window_median']:.4f}")
        output.append("")
    return "\n".join(output)


def format_error(error, context=""):
    """
    Format an error message with helpful guidance.

    Args:
        error: Exception or error message
        context: Additional context about what was being attempted

    Returns:
        Formatted error message
    """
    output = []
    output.append("=== Error ===")
    if context:
        output.append(f"Context: {context}")
    output.append(f"Error: {str(error)}")
    output.append("")

    if isinstance(error, InfeasibleTargetError):
        output.append("Troubleshooting steps:")
        output.append("1. Pick a compression factor inside the achievable range")
        output.append("2. Use a wider network or a different profile family")
    elif isinstance(error, ConfigurationError):
        output.append("Troubleshooting steps:")
        output.append("1. Check the experiment config and command-line flags")
        output.append("2. Check PRUNE_* variables in your .env file")
        output.append("3. Run: python scripts/validate_setup.py")
    elif isinstance(error, NumericInstabilityError):
        output.append("Troubleshooting steps:")
        output.append("1. Lower the learning rate")
        output.append("2. Raise PRUNE_MAX_RETRIES")
    elif isinstance(error, ArchitectureMismatchError):
        output.append("Troubleshooting steps:")
        output.append("1. Check that the profile or policy was produced for this architecture and width")
    output.append("")

    return "\n".join(output)
