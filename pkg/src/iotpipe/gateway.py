"""CoAP-to-HTTP cross proxy at the edge of the constrained network.

Terminates the 6LoWPAN side, maps CoAP requests onto HTTP requests against
the backend, maps the responses back, and crosses from IPv6 (link side) to
IPv4 (upstream side). Payloads pass through byte-identical.
"""

import json
from collections import OrderedDict
from dataclasses import dataclass, field

import requests

from . import coap
from .stack import StackEndpoint


class GatewayError(Exception):
    pass


class UnsupportedMethod(GatewayError):
    pass


class MissingPath(GatewayError):
    pass


class PayloadTooLargeForLink(GatewayError):
    pass


def default_method_map():
    return {
        (0, 1): "GET",
        (0, 2): "POST",
        (0, 3): "PUT",
        (0, 4): "DELETE",
    }


def default_status_map():
    return {
        200: (2, 5),   # Content
        201: (2, 1),   # Created
        204: (2, 4),   # Changed
        400: (4, 0),
        403: (4, 3),
        404: (4, 4),
        405: (4, 5),
        413: (4, 13),
        500: (5, 0),
        502: (5, 2),
        503: (5, 3),
        504: (5, 4),
    }


def default_content_map():
    return dict(coap.CONTENT_FORMATS)


@dataclass
class ProxyMapping:
    method_map: dict = field(default_factory=default_method_map)
    status_map: dict = field(default_factory=default_status_map)
    content_map: dict = field(default_factory=default_content_map)
    fallback_code: tuple = (5, 2)  # bad-gateway semantics
    path_prefix: str = ""          # optional rewrite inserted before the CoAP path
    # Optional: shrink creation acknowledgements to a bare success code so
    # the reply fits one 802.15.4 frame (fewer frames to lose on a lossy
    # link); the stored entity stays queryable upstream. Off by default to
    # keep the proxy transparent.
    strip_success_bodies: bool = False

    def coap_code_for(self, http_status: int) -> tuple:
        return self.status_map.get(http_status, self.fallback_code)

    def content_format_for(self, media_type: str):
        base = (media_type or "").split(";")[0].strip()
        for cf_id, label in self.content_map.items():
            if label == base:
                return cf_id
        return None


@dataclass
class UpstreamConfig:
    base_url: str
    timeout: float = 5.0
    max_inflight: int = 4


@dataclass
class HttpRequestModel:
    method: str
    url: str
    headers: dict
    body: bytes


@dataclass
class HttpResponseModel:
    status: int
    headers: dict
    body: bytes


def translate_request(msg: coap.CoapMessage, mapping: ProxyMapping,
                      upstream: UpstreamConfig) -> HttpRequestModel:
    if not msg.is_request():
        raise UnsupportedMethod("not a request: code %s" % msg.code_str())
    method = mapping.method_map.get(msg.code)
    if method is None:
        raise UnsupportedMethod("no HTTP mapping for CoAP %s" % msg.code_str())
    segments = msg.uri_path()
    if not segments:
        raise MissingPath("request carries no Uri-Path")
    path = "/".join(segments)
    if mapping.path_prefix:
        path = mapping.path_prefix.strip("/") + "/" + path
    url = upstream.base_url.rstrip("/") + "/" + path
    headers = {}
    cf = msg.content_format()
    if msg.payload:
        headers["Content-Type"] = mapping.content_map.get(cf, "application/octet-stream")
    return HttpRequestModel(method=method, url=url, headers=headers, body=msg.payload)


def translate_response(resp: HttpResponseModel, request: coap.CoapMessage,
                       mapping: ProxyMapping,
                       link_payload_limit: int = None) -> coap.CoapMessage:
    code = mapping.coap_code_for(resp.status)
    options = []
    body = resp.body or b""
    if (getattr(mapping, "strip_success_bodies", False) and code[0] == 2
            and request.code == coap.METHOD_POST):
        body = b""
    if body:
        cf = mapping.content_format_for(resp.headers.get("Content-Type", ""))
        if cf is not None:
            options.append((coap.OPT_CONTENT_FORMAT, bytes([cf])))
    if request.msg_type == coap.MsgType.CON:
        msg_type, mid = coap.MsgType.ACK, request.message_id
    else:
        msg_type, mid = coap.MsgType.NON, request.message_id
    msg = coap.CoapMessage(
        msg_type=msg_type,
        code=code,
        message_id=mid,
        token=request.token,
        options=options,
        payload=body,
    )
    if link_payload_limit is not None and len(coap.encode(msg)) > link_payload_limit:
        raise PayloadTooLargeForLink(
            "response of %d bytes exceeds the link budget" % len(coap.encode(msg))
        )
    return msg


@dataclass
class GatewayMetrics:
    requests_received: int = 0
    requests_forwarded: int = 0
    responses_sent: int = 0
    upstream_errors: int = 0
    dedup_hits: int = 0
    decode_errors: int = 0


class Gateway:
    """Edge proxy bound to one link-side stack endpoint and one HTTP origin.

    Stateless across requests apart from reassembly buffers and a bounded
    cache of recent exchanges used to deduplicate CoAP retransmissions.
    """

    DEDUP_CAPACITY = 128

    def __init__(self, endpoint: StackEndpoint, upstream: UpstreamConfig,
                 mapping: ProxyMapping = None, session=None,
                 metrics_log=None):
        self.endpoint = endpoint
        self.upstream = upstream
        self.mapping = mapping or ProxyMapping()
        self.session = session or requests.Session()
        self.metrics = GatewayMetrics()
        self.metrics_log = metrics_log  # writable file-like, JSON lines
        self._recent = OrderedDict()    # (link_src, mid, token) -> encoded reply

    def _log_event(self, event: dict):
        if self.metrics_log is not None:
            self.metrics_log.write(json.dumps(event, separators=(",", ":")) + "\n")

    def _exchange(self, http_req: HttpRequestModel) -> HttpResponseModel:
        response = self.session.request(
            http_req.method,
            http_req.url,
            data=http_req.body,
            headers=http_req.headers,
            timeout=self.upstream.timeout,
        )
        return HttpResponseModel(
            status=response.status_code,
            headers=dict(response.headers),
            body=response.content,
        )

    def _error_reply(self, request: coap.CoapMessage, code: tuple) -> coap.CoapMessage:
        return translate_response(
            HttpResponseModel(status=0, headers={}, body=b""), request,
            _StaticMapping(code),
        )

    def _handle(self, request: coap.CoapMessage, now: float) -> coap.CoapMessage:
        try:
            http_req = translate_request(request, self.mapping, self.upstream)
        except UnsupportedMethod:
            return self._error_reply(request, (4, 5))
        except MissingPath:
            return self._error_reply(request, (4, 0))
        self.metrics.requests_forwarded += 1
        try:
            http_resp = self._exchange(http_req)
        except requests.Timeout:
            self.metrics.upstream_errors += 1
            self._log_event({"event": "upstream_timeout", "t": now})
            return self._error_reply(request, (5, 4))
        except requests.RequestException as exc:
            self.metrics.upstream_errors += 1
            self._log_event({"event": "upstream_error", "t": now, "error": str(exc)})
            return self._error_reply(request, (5, 2))
        try:
            return translate_response(
                http_resp, request, self.mapping,
                link_payload_limit=None,
            )
        except PayloadTooLargeForLink:
            return self._error_reply(request, (4, 13))

    def process_pending(self, now: float = 0.0) -> int:
        """Drain the link side; one CoAP exchange per completed datagram."""
        handled = 0
        for dgram in self.endpoint.receive(now):
            try:
                request = coap.decode(dgram.payload)
            except coap.CoapError:
                self.metrics.decode_errors += 1
                continue
            self.metrics.requests_received += 1
            key = (dgram.link_src, request.message_id, request.token)
            cached = self._recent.get(key)
            if cached is not None:
                self.metrics.dedup_hits += 1
                self._log_event({
                    "event": "dedup", "t": now, "mid": request.message_id,
                    "token": request.token.hex(),
                })
                self.endpoint.send(cached, now=now)
                self.metrics.responses_sent += 1
                handled += 1
                continue
            reply = self._handle(request, now)
            encoded = coap.encode(reply)
            self._recent[key] = encoded
            while len(self._recent) > self.DEDUP_CAPACITY:
                self._recent.popitem(last=False)
            self.endpoint.send(encoded, now=now)
            self.metrics.responses_sent += 1
            self._log_event({
                "event": "exchange", "t": now,
                "mid": request.message_id, "token": request.token.hex(),
                "code": reply.code_str(),
                "request_bytes": len(dgram.payload),
                "response_bytes": len(encoded),
            })
            handled += 1
        return handled


class _StaticMapping:
    """Mapping stand-in that yields a fixed CoAP code for error replies."""

    content_map = {}

    def __init__(self, code):
        self._code = code

    def coap_code_for(self, _status):
        return self._code

    def content_format_for(self, _media_type):
        return None
