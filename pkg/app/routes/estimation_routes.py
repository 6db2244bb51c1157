import logging

from flask import Blueprint, jsonify, request

from ..services.report_service import dumps
from ..services.run_service import parse_config, perform
from ..utils.errors import ConfigError, EstimationError

logger = logging.getLogger(__name__)

estimation_bp = Blueprint('estimation_bp', __name__)


def _run(subcommand):
    payload = request.get_json(silent=True)
    if not isinstance(payload, dict):
        return jsonify({'error': 'ConfigError', 'message': 'request body must be a JSON object'}), 400
    payload = {**payload, 'subcommand': subcommand}
    # outputs go back in the response, never to the server's disk
    payload.pop('out', None)
    try:
        config = parse_config(payload)
        document, _ = perform(config)
    except ConfigError as e:
        logger.warning("rejected %s request: %s", subcommand, e)
        return jsonify({'error': type(e).__name__, 'message': str(e)}), 400
    except EstimationError as e:
        logger.error("%s failed: %s", subcommand, e)
        return jsonify({'error': type(e).__name__, 'message': str(e)}), 422
    except Exception as e:
        logger.exception("unexpected error in %s", subcommand)
        return jsonify({'error': 'InternalError', 'message': str(e)}), 500
    return dumps(document), 200, {'Content-Type': 'application/json'}


@estimation_bp.route('/estimate', methods=['POST'])
def estimate():
    """Estimate the ASF at the requested points"""
    return _run('estimate')


@estimation_bp.route('/simulate', methods=['POST'])
def simulate():
    """Draw one dataset from a reference design"""
    return _run('simulate')


@estimation_bp.route('/diagnose', methods=['POST'])
def diagnose():
    """Support, influence and small-ball diagnostics"""
    return _run('diagnose')


@estimation_bp.route('/health', methods=['GET'])
def health():
    return jsonify({'status': 'ok'})
