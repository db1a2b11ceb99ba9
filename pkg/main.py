import os
import sys

from dotenv import load_dotenv

# Load environment variables from .env file first
load_dotenv()


def load_service():
    """Import the Flask app with its route modules; used by gunicorn (main:app) and `serve`"""
    from app import app
    import routes  # noqa: F401  view generation API
    import health_check  # noqa: F401  health endpoints
    return app


if __name__ == '__main__':
    if sys.argv[1:2] == ['serve']:
        try:
            app = load_service()
        except ImportError as e:
            print(f"❌ Error importing service modules: {e}", file=sys.stderr)
            sys.exit(1)
        debug_mode = os.environ.get('FLASK_DEBUG', 'False').lower() == 'true'
        port = int(os.environ.get('PORT', 8000))
        print(f"✅ Starting view service in {'DEBUG' if debug_mode else 'PRODUCTION'} mode on port {port}",
              file=sys.stderr)
        try:
            app.run(host='0.0.0.0', port=port, debug=debug_mode)
        except KeyboardInterrupt:
            print("\n👋 Server stopped by user", file=sys.stderr)
        sys.exit(0)

    from cli import run
    sys.exit(run(sys.argv[1:]))
else:
    app = load_service()
