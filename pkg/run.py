"""Development server for the estimation API (``python run.py``)."""
import os

from app import create_app

app = create_app()

if __name__ == '__main__':
    debug_mode = os.getenv('FLASK_DEBUG', 'False').lower() in ['true', '1', 't']
    app.run(
        host=os.getenv('ASF_HOST', '127.0.0.1'),
        port=int(os.getenv('ASF_PORT', '5000')),
        debug=debug_mode,
    )
