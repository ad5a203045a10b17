from collections.abc import Iterable, Mapping
from typing import Any, Optional


def filter_mapping(
    mapping: Mapping[Any, Any], keep: Optional[Iterable[Any]] = None
) -> dict[Any, Any]:
    """
    Return a dictionary without the entries whose value is None.
    If keep is given, only keys in keep survive as well.

    :param mapping: e.g. the keyword arguments collected by a click command
    :type mapping: Mapping[Any, Any]
    :param keep: keys to retain, defaults to all keys
    :type keep: Iterable[Any], optional
    :rtype: dict[Any, Any]
    """
    keys = mapping.keys() if keep is None else [k for k in keep if k in mapping]
    return {k: mapping[k] for k in keys if mapping[k] is not None}


def relabel_mapping(
    mapping: Mapping[Any, Any], key_map: Mapping[Any, Any]
) -> dict[Any, Any]:
    """
    Return mapping with its keys relabeled according to key_map.
    Keys missing from key_map are kept as they are.
    """
    return {key_map.get(key, key): value for key, value in mapping.items()}


def deep_update(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """
    Merge overrides into a copy of base, recursing into nested mappings.

    Dotted keys ("detector.threshold") address nested entries.
    """
    merged = {k: (dict(v) if isinstance(v, Mapping) else v) for k, v in base.items()}
    for key, value in overrides.items():
        if isinstance(key, str) and "." in key:
            head, tail = key.split(".", 1)
            value = {tail: value}
            key = head
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_update(merged[key], value)
        else:
            merged[key] = value
    return merged
