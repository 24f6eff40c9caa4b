"""Simulated constrained sensor node.

Pushes one temperature observation per period as a CoAP POST through the
compressed (or uncompressed) stack, optionally with confirmable
retransmission, and records per-layer sizes and outcomes.
"""

import json
import random
from dataclasses import dataclass, field, asdict

from . import coap
from .stack import StackEndpoint


@dataclass
class ObservationPayload:
    result: int

    def to_bytes(self) -> bytes:
        return serialize_payload(self)


def serialize_payload(p: ObservationPayload) -> bytes:
    """Compact JSON, single key, no whitespace; 15 bytes for a 4-digit result."""
    return json.dumps({"result": p.result}, separators=(",", ":")).encode("ascii")


class FixedTemperature:
    def __init__(self, value: int = 2143):
        self.value = value

    def next(self) -> int:
        return self.value


class RandomWalkTemperature:
    def __init__(self, seed: int = 0, start: int = 2143, step: int = 5):
        self._rng = random.Random(seed)
        self._value = start
        self._step = step

    def next(self) -> int:
        self._value += self._rng.randint(-self._step, self._step)
        return self._value


@dataclass
class Reliability:
    confirmable: bool = False
    max_retransmit: int = 4
    initial_timeout: float = 2.0


@dataclass
class NodeConfig:
    period: float = 10.0
    path: tuple = ("Observations",)
    reliability: Reliability = field(default_factory=Reliability)
    temperature: object = field(default_factory=FixedTemperature)
    token_length: int = 2


@dataclass
class SendRecord:
    seq: int
    time: float
    result: int
    payload_hex: str
    message_id: int
    token_hex: str
    attempts: int
    outcome: str               # acked | sent | failed
    response_code: str
    payload_bytes: int
    coap_overhead_bytes: int
    net_transport_bytes: int
    link_overhead_bytes: int
    total_frame_bytes: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


class Node:
    """One sensor node bound to one stack endpoint."""

    def __init__(self, config: NodeConfig, endpoint: StackEndpoint, clock,
                 node_id: int = 0):
        self.config = config
        self.endpoint = endpoint
        self.clock = clock
        self.node_id = node_id
        self._mid = coap.MessageIdCounter(start=(node_id * 4096) & 0xFFFF)
        self._token_rng = random.Random(0xBEEF ^ node_id)
        self.records = []

    def _next_token(self) -> bytes:
        return bytes(
            self._token_rng.randrange(256) for _ in range(self.config.token_length)
        )

    def _build_request(self, payload: bytes) -> coap.CoapMessage:
        rel = self.config.reliability
        cfg = coap.RequestConfig(
            msg_type=coap.MsgType.CON if rel.confirmable else coap.MsgType.NON,
            token=self._next_token(),
            message_id=self._mid.take(),
        )
        return coap.build_observation_request(list(self.config.path), payload, cfg)

    def _poll_once(self, request, pump):
        now = self.clock.now()
        if pump is not None:
            pump(now)
        for dgram in self.endpoint.receive(now):
            try:
                response = coap.decode(dgram.payload)
            except coap.CoapError:
                continue
            if coap.match_response(request, response):
                return response
        return None

    def _await_response(self, request, deadline, pump):
        while True:
            response = self._poll_once(request, pump)
            if response is not None:
                return response
            if self.clock.now() >= deadline:
                return None
            self.clock.sleep(min(0.05, deadline - self.clock.now()))

    def send_observation(self, pump=None) -> SendRecord:
        """Send one observation now; blocks (in clock time) for CON exchanges."""
        reading = self.config.temperature.next()
        payload = serialize_payload(ObservationPayload(reading))
        request = self._build_request(payload)
        encoded = coap.encode(request)
        rel = self.config.reliability

        attempts = 0
        response = None
        timeout = rel.initial_timeout
        tx = None
        max_attempts = 1 + (rel.max_retransmit if rel.confirmable else 0)
        while attempts < max_attempts:
            now = self.clock.now()
            tx = self.endpoint.send(encoded, now=now)
            attempts += 1
            if rel.confirmable:
                response = self._await_response(request, now + timeout, pump)
                if response is not None:
                    break
                timeout *= 2
            else:
                # Non-confirmable: the in-process gateway answers synchronously
                # through the pump; no retransmission timer.
                response = self._poll_once(request, pump)
                break

        if response is not None and response.code[0] == 2:
            outcome = "acked"
        elif response is not None:
            outcome = "error"
        elif rel.confirmable:
            outcome = "failed"
        else:
            outcome = "sent" if tx.delivered else "failed"

        record = SendRecord(
            seq=len(self.records),
            time=self.clock.now(),
            result=reading,
            payload_hex=payload.hex(),
            message_id=request.message_id,
            token_hex=request.token.hex(),
            attempts=attempts,
            outcome=outcome,
            response_code=response.code_str() if response else "",
            payload_bytes=len(payload),
            coap_overhead_bytes=coap.overhead_bytes(request),
            net_transport_bytes=tx.net_transport_bytes,
            link_overhead_bytes=tx.link_overhead_bytes,
            total_frame_bytes=tx.total_bytes,
        )
        self.records.append(record)
        return record


def run_node(config: NodeConfig, endpoint: StackEndpoint, clock,
             duration: float = None, count: int = None, pump=None,
             node_id: int = 0) -> list:
    """Run one node for a duration or an observation count; returns SendRecords.

    `pump` is called with the current time whenever the node yields, so a
    co-scheduled gateway can process traffic between node steps.
    """
    if duration is None and count is None:
        raise ValueError("need a duration or a count bound")
    node = Node(config, endpoint, clock, node_id=node_id)
    start = clock.now()
    sent = 0
    while True:
        if count is not None and sent >= count:
            break
        if duration is not None and clock.now() - start + config.period > duration + 1e-9:
            break
        clock.sleep(config.period)
        node.send_observation(pump=pump)
        sent += 1
    return node.records
