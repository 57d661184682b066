"""The OpenAPI subset the executor relies on: operations, parameters, media types."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

TYPE_TOKENS = frozenset({"string", "integer", "number", "boolean", "array", "object"})
HTTP_METHODS = ("get", "put", "post", "delete", "patch", "head", "options", "trace")
PARAM_LOCATIONS = frozenset({"path", "query", "header", "cookie"})
NON_TEXTUAL_PREFIXES = ("image/", "audio/", "video/")
NON_TEXTUAL_TYPES = frozenset({"application/octet-stream", "application/pdf"})

_STATUS_RE = re.compile(r"^(default|[1-5](\d\d|XX))$")
_TEMPLATE_RE = re.compile(r"\{([^{}]+)\}")


@dataclass(frozen=True)
class ParamDecl:
    name: str
    location: str  # path | query | header | cookie | body
    type: str | None
    required: bool
    format: str | None = None
    description: str = ""


@dataclass(frozen=True)
class Operation:
    operation_id: str
    method: str
    path: str
    parameters: tuple[ParamDecl, ...]
    request_media_types: tuple[str, ...] = ()
    responses: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def param(self, name: str) -> ParamDecl | None:
        for p in self.parameters:
            if p.name == name:
                return p
        return None


@dataclass(frozen=True)
class Violation:
    kind: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


def _isdict(x: Any) -> bool:
    return isinstance(x, dict)


@dataclass(frozen=True)
class ApiSchema:
    """An OpenAPI document kept as plain JSON data, with typed views over it."""

    document: dict[str, Any]

    @property
    def server_url(self) -> str | None:
        servers = self.document.get("servers")
        if isinstance(servers, list) and servers and _isdict(servers[0]):
            url = servers[0].get("url")
            return url if isinstance(url, str) and url else None
        return None

    def resolve(self, node: Any) -> Any:
        """Follow local ``#/...`` references; anything unresolvable comes back as ``{}``."""
        seen = 0
        while _isdict(node) and isinstance(node.get("$ref"), str):
            ref = node["$ref"]
            if not ref.startswith("#/") or seen > 16:
                return {}
            target: Any = self.document
            for part in ref[2:].split("/"):
                part = part.replace("~1", "/").replace("~0", "~")
                if not _isdict(target) or part not in target:
                    return {}
                target = target[part]
            node = target
            seen += 1
        return node

    def operations(self) -> list[Operation]:
        ops = []
        paths = self.document.get("paths")
        if not _isdict(paths):
            return ops
        for path, item in paths.items():
            item = self.resolve(item)
            if not _isdict(item):
                continue
            shared = item.get("parameters") or []
            for method in HTTP_METHODS:
                op = item.get(method)
                if not _isdict(op):
                    continue
                ops.append(self._operation(path, method, op, shared))
        return ops

    def operation(self, operation_id: str) -> Operation | None:
        for op in self.operations():
            if op.operation_id == operation_id:
                return op
        return None

    def _operation(self, path: str, method: str, op: dict[str, Any], shared: list[Any]) -> Operation:
        params: dict[tuple[str, str], ParamDecl] = {}
        raw_params = list(shared) + list(op.get("parameters") or [])
        for raw in raw_params:
            raw = self.resolve(raw)
            if not _isdict(raw):
                continue
            schema = self.resolve(raw.get("schema") or {})
            decl = ParamDecl(
                name=str(raw.get("name", "")),
                location=str(raw.get("in", "")),
                type=schema.get("type") if _isdict(schema) else None,
                required=bool(raw.get("required", False)) or raw.get("in") == "path",
                format=schema.get("format") if _isdict(schema) else None,
                description=str(raw.get("description", "")),
            )
            params[(decl.name, decl.location)] = decl

        request_media: tuple[str, ...] = ()
        body = self.resolve(op.get("requestBody") or {})
        if _isdict(body) and _isdict(body.get("content")):
            request_media = tuple(body["content"])
            for media, content in body["content"].items():
                schema = self.resolve((content or {}).get("schema") or {}) if _isdict(content) else {}
                if not _isdict(schema) or not _isdict(schema.get("properties")):
                    continue
                required = set(schema.get("required") or [])
                for pname, pschema in schema["properties"].items():
                    pschema = self.resolve(pschema)
                    pschema = pschema if _isdict(pschema) else {}
                    params.setdefault(
                        (pname, "body"),
                        ParamDecl(
                            name=pname,
                            location="body",
                            type=pschema.get("type"),
                            required=pname in required,
                            format=pschema.get("format"),
                            description=str(pschema.get("description", "")),
                        ),
                    )
                break  # the first media type with an object schema defines the body fields

        responses: dict[str, tuple[str, ...]] = {}
        raw_responses = op.get("responses")
        if _isdict(raw_responses):
            for code, resp in raw_responses.items():
                resp = self.resolve(resp)
                content = resp.get("content") if _isdict(resp) else None
                responses[str(code)] = tuple(content) if _isdict(content) else ()

        return Operation(
            operation_id=str(op.get("operationId", "")),
            method=method.upper(),
            path=path,
            parameters=tuple(params.values()),
            request_media_types=request_media,
            responses=responses,
        )


def validate_schema(schema: ApiSchema, function_names: list[str] | None = None) -> list[Violation]:
    """Structural check of the OpenAPI subset. Violations are returned, never raised.

    When ``function_names`` is given, the operation identifiers must match it one-to-one.
    """
    doc = schema.document
    out: list[Violation] = []
    if not _isdict(doc):
        return [Violation("missing_field", "$", "document is not an object")]
    if schema.server_url is None:
        out.append(Violation("missing_field", "servers", "no server base URL"))
    paths = doc.get("paths")
    if not _isdict(paths) or not paths:
        out.append(Violation("missing_field", "paths", "no paths declared"))
        paths = {}

    seen_ids: dict[str, str] = {}
    for path, item in paths.items():
        item = schema.resolve(item)
        if not _isdict(item):
            out.append(Violation("missing_field", f"paths.{path}", "path item is not an object"))
            continue
        methods = [m for m in HTTP_METHODS if m in item]
        if not methods:
            out.append(Violation("missing_field", f"paths.{path}", "path declares no operations"))
        shared = item.get("parameters") or []
        for method in methods:
            where = f"paths.{path}.{method}"
            raw_op = item[method]
            if not _isdict(raw_op):
                out.append(Violation("missing_field", where, "operation is not an object"))
                continue
            op_id = raw_op.get("operationId")
            if not isinstance(op_id, str) or not op_id:
                out.append(Violation("missing_field", where, "operation has no operationId"))
            elif op_id in seen_ids:
                out.append(
                    Violation("duplicate_operation_id", where, f"operationId {op_id!r} already used at {seen_ids[op_id]}")
                )
            else:
                seen_ids[op_id] = where
            out.extend(_check_parameters(schema, where, list(shared) + list(raw_op.get("parameters") or [])))
            out.extend(_check_body(schema, where, raw_op.get("requestBody")))
            out.extend(_check_responses(schema, where, raw_op.get("responses")))
            op = schema._operation(path, method, raw_op, shared)
            declared_path = {p.name for p in op.parameters if p.location == "path"}
            placeholders = set(_TEMPLATE_RE.findall(path))
            for name in sorted(placeholders - declared_path):
                out.append(
                    Violation("undeclared_parameter", where, f"path placeholder {{{name}}} has no parameter declaration")
                )
            for name in sorted(declared_path - placeholders):
                out.append(Violation("undeclared_parameter", where, f"path parameter {name!r} does not occur in the path"))

    if function_names is not None:
        for name in function_names:
            if name not in seen_ids:
                out.append(Violation("missing_operation", "paths", f"function {name!r} has no operation"))
        wanted = set(function_names)
        for op_id, where in seen_ids.items():
            if op_id not in wanted:
                out.append(Violation("unmatched_operation", where, f"operation {op_id!r} matches no function"))
    return out


def _check_type(where: str, schema: Any, required: bool, label: str) -> list[Violation]:
    t = schema.get("type") if _isdict(schema) else None
    if t is None:
        if required:
            return [Violation("missing_field", where, f"required {label} has no schema type")]
        return []
    if not isinstance(t, str) or t not in TYPE_TOKENS:
        return [Violation("unknown_type", where, f"{label} uses unknown type token {t!r}")]
    return []


def _check_parameters(schema: ApiSchema, where: str, raw_params: list[Any]) -> list[Violation]:
    out = []
    seen: set[tuple[str, str]] = set()
    for i, raw in enumerate(raw_params):
        raw = schema.resolve(raw)
        loc = f"{where}.parameters[{i}]"
        if not _isdict(raw):
            out.append(Violation("missing_field", loc, "parameter is not an object"))
            continue
        name, place = raw.get("name"), raw.get("in")
        if not isinstance(name, str) or not name:
            out.append(Violation("missing_field", loc, "parameter has no name"))
            continue
        if place not in PARAM_LOCATIONS:
            out.append(Violation("invalid_location", loc, f"parameter {name!r} has invalid location {place!r}"))
            continue
        if (name, place) in seen:
            continue
        seen.add((name, place))
        required = bool(raw.get("required", False)) or place == "path"
        out.extend(_check_type(loc, schema.resolve(raw.get("schema") or {}), required, f"parameter {name!r}"))
    return out


def _check_body(schema: ApiSchema, where: str, body: Any) -> list[Violation]:
    if body is None:
        return []
    body = schema.resolve(body)
    loc = f"{where}.requestBody"
    if not _isdict(body) or not _isdict(body.get("content")) or not body["content"]:
        return [Violation("missing_field", loc, "request body declares no content media types")]
    out = []
    for media, content in body["content"].items():
        s = schema.resolve((content or {}).get("schema") or {}) if _isdict(content) else {}
        if not _isdict(s):
            continue
        props = s.get("properties")
        props = props if _isdict(props) else {}
        required = s.get("required") or []
        for pname in required if isinstance(required, list) else []:
            if pname not in props:
                out.append(
                    Violation("undeclared_parameter", f"{loc}.{media}", f"required body field {pname!r} is not declared")
                )
        for pname, pschema in props.items():
            out.extend(
                _check_type(f"{loc}.{media}.{pname}", schema.resolve(pschema), pname in required, f"body field {pname!r}")
            )
    return out


def _check_responses(schema: ApiSchema, where: str, responses: Any) -> list[Violation]:
    loc = f"{where}.responses"
    if not _isdict(responses) or not responses:
        return [Violation("missing_field", loc, "operation declares no responses")]
    out = []
    for code in responses:
        if not _STATUS_RE.match(str(code)):
            out.append(Violation("invalid_status_code", loc, f"invalid status code {code!r}"))
    return out


def _is_non_textual(media_type: str) -> bool:
    media = media_type.split(";")[0].strip().lower()
    return media.startswith(NON_TEXTUAL_PREFIXES) or media in NON_TEXTUAL_TYPES


def is_textual_only(schema: ApiSchema) -> tuple[bool, str | None]:
    """False (with a reason) when any operation moves non-textual content."""
    for op in schema.operations():
        for media in op.request_media_types:
            if _is_non_textual(media):
                return False, f"{op.operation_id}: request body uses non-textual media type {media}"
        for code, media_types in op.responses.items():
            for media in media_types:
                if _is_non_textual(media):
                    return False, f"{op.operation_id}: response {code} uses non-textual media type {media}"
        for p in op.parameters:
            if p.format == "binary":
                return False, f"{op.operation_id}: parameter {p.name!r} is binary"
    return True, None
