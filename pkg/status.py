"""
UGSD Status Endpoint
Small Flask app reporting verifier liveness and per-session counters
"""

import logging
import threading

from flask import Flask, jsonify

from cloud import CloudVerifierService
from errors import SessionUnknownError

logger = logging.getLogger(__name__)


def create_status_app(service: CloudVerifierService) -> Flask:
    app = Flask(__name__)

    @app.route('/health')
    def health():
        open_sessions, closed_sessions = service.counts()
        return {
            "status": "healthy",
            "message": "UGSD cloud verifier",
            "vocab_checksum": service.vocab.checksum,
            "open_sessions": open_sessions,
            "closed_sessions": closed_sessions,
        }

    @app.route('/sessions')
    def sessions():
        return jsonify(service.stats())

    @app.route('/sessions/<session_id>')
    def session_detail(session_id):
        try:
            return service.session(session_id).stats()
        except SessionUnknownError:
            return {"error": "session_unknown", "session_id": session_id}, 404

    return app


def start_status_server(service: CloudVerifierService, host: str, port: int) -> threading.Thread:
    """Serve the status app next to the verifier socket"""
    app = create_status_app(service)
    thread = threading.Thread(
        target=lambda: app.run(host=host, port=port, use_reloader=False),
        name="ugsd-status",
        daemon=True,
    )
    thread.start()
    logger.info(f"📊 status endpoint on http://{host}:{port}/health")
    return thread
