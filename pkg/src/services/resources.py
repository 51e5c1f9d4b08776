"""
Resource protocol of the Virtual Objects: REST-style requests dispatched to
VoResource instances. Bodies are JSON documents with decimal numbers.
"""

import json
import logging
from typing import Dict, NamedTuple, Optional
from urllib.parse import parse_qs, urlsplit

from src.models.frames import Timestamp
from src.models.virtual_object import Trigger, VoResource, record_to_document
from src.services.codec import decode_command
from src.utils.errors import NoDataError

logger = logging.getLogger(__name__)


class Response(NamedTuple):
    status: int
    body: bytes = b''

    def json(self):
        return json.loads(self.body) if self.body else None


def _error(status: int, message: str) -> Response:
    return Response(status, json.dumps({'error': message}).encode())


class ResourceServer:
    """Routes /vo/{id}/... requests"""

    def __init__(self, vos: Optional[Dict[str, VoResource]] = None):
        self.vos: Dict[str, VoResource] = dict(vos or {})


    def register(self, vo: VoResource):
        self.vos[vo.vo_id] = vo


    def handle(self, method: str, path: str, body: bytes = b'') -> Response:
        url = urlsplit(path)
        parts = [p for p in url.path.split('/') if p]
        if len(parts) < 3 or parts[0] != 'vo':
            return _error(404, f"No resource at {url.path}")
        vo = self.vos.get(parts[1])
        if vo is None:
            return _error(404, f"Unknown VO {parts[1]!r}")

        resource = parts[2]
        try:
            if resource == 'measurements' and len(parts) == 3:
                if method != 'GET':
                    return _error(405, "measurements only supports GET")
                return self._measurements(vo, parse_qs(url.query))
            if resource == 'triggers':
                if method == 'POST' and len(parts) == 3:
                    return self._add_trigger(vo, body)
                if method == 'DELETE' and len(parts) == 4:
                    if parts[3] not in vo.triggers:
                        return _error(404, f"No trigger {parts[3]!r} on {vo.vo_id}")
                    vo.remove_trigger(parts[3])
                    return Response(204)
                return _error(405, f"{method} not allowed on {url.path}")
            if resource == 'rate' and len(parts) == 3 and method == 'POST':
                request = json.loads(body)
                vo.apply_rate(int(request['rate']))
                return Response(200, json.dumps({'rate': int(request['rate'])}).encode())
            if resource == 'commands' and len(parts) == 3 and method == 'POST':
                return self._command(vo, body)
        except NoDataError as e:
            return _error(404, str(e))
        except (ValueError, KeyError, TypeError) as e:
            return _error(400, str(e))
        return _error(404, f"No resource at {url.path}")


    def _measurements(self, vo: VoResource, query: Dict) -> Response:
        fields = [f for value in query.get('fields', []) for f in value.split(',') if f]
        if not fields:
            raise ValueError("fields query parameter is required")
        window = int(query['window'][0]) if 'window' in query else None
        return Response(200, record_to_document(vo.get_resource(fields, window)))


    def _add_trigger(self, vo: VoResource, body: bytes) -> Response:
        trigger = Trigger.from_document(json.loads(body))
        if trigger.id in vo.triggers:
            return _error(409, f"Trigger id {trigger.id!r} already registered on {vo.vo_id}")
        vo.register_trigger(trigger)
        logger.debug("VO %s registered %s", vo.vo_id, trigger)
        return Response(201, json.dumps({'id': trigger.id}).encode())


    def _command(self, vo: VoResource, body: bytes) -> Response:
        request = json.loads(body)
        timestamp = None
        if 'soc' in request:
            timestamp = Timestamp(int(request['soc']), int(request.get('fracsec', 0)))
        wire = vo.command_frame(request['command'], timestamp)
        if vo.pmu is not None:
            vo.pmu.handle_command(decode_command(wire))
        return Response(202, json.dumps({'command': request['command'], 'frame': wire.hex()}).encode())


    def __repr__(self):
        return f"ResourceServer({len(self.vos)} VOs)"
