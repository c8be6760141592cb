"""
Enhanced Logging System
========================
Console + rotating-file logging for fits, renders and gradient checks
"""

import logging
import os
from logging.handlers import RotatingFileHandler
from datetime import datetime
import traceback
import config

# ==========================================
# LOG LEVELS
# ==========================================
LOG_LEVELS = {
    'DEBUG': logging.DEBUG,
    'INFO': logging.INFO,
    'WARNING': logging.WARNING,
    'ERROR': logging.ERROR,
    'CRITICAL': logging.CRITICAL
}

# ==========================================
# CUSTOM FORMATTER
# ==========================================
class ColoredFormatter(logging.Formatter):
    """Custom formatter with colors for console output"""

    COLORS = {
        'DEBUG': '\033[36m',      # Cyan
        'INFO': '\033[32m',       # Green
        'WARNING': '\033[33m',    # Yellow
        'ERROR': '\033[31m',      # Red
        'CRITICAL': '\033[35m',   # Magenta
        'RESET': '\033[0m'
    }

    def format(self, record):
        if hasattr(record, 'stage'):
            record.msg = f"[{record.stage}] {record.msg}"

        log_color = self.COLORS.get(record.levelname, self.COLORS['RESET'])
        record.levelname = f"{log_color}{record.levelname}{self.COLORS['RESET']}"

        return super().format(record)

# ==========================================
# LOGGER SETUP
# ==========================================
class Logger:
    """Logger with rotation and per-stage tagging"""

    def __init__(self, name='densityfit'):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(LOG_LEVELS.get(config.LOG_LEVEL, logging.INFO))

        # Prevent duplicate handlers
        if self.logger.handlers:
            return

        # Console handler on stderr so stdout stays machine-readable
        console_handler = logging.StreamHandler()
        console_handler.setLevel(logging.DEBUG)
        console_formatter = ColoredFormatter(
            '%(asctime)s | %(levelname)s | %(message)s',
            datefmt='%H:%M:%S'
        )
        console_handler.setFormatter(console_formatter)
        self.logger.addHandler(console_handler)

        if config.LOG_TO_FILE:
            try:
                os.makedirs('logs', exist_ok=True)
                file_handler = RotatingFileHandler(
                    f'logs/{config.LOG_FILE}',
                    maxBytes=config.LOG_MAX_SIZE,
                    backupCount=config.LOG_BACKUP_COUNT,
                    encoding='utf-8'
                )
                file_handler.setLevel(logging.DEBUG)
                file_formatter = logging.Formatter(
                    config.LOG_FORMAT,
                    datefmt=config.LOG_DATE_FORMAT
                )
                file_handler.setFormatter(file_formatter)
                self.logger.addHandler(file_handler)
            except Exception as e:
                print(f"⚠️ Failed to setup file logging: {e}")

    def debug(self, msg, stage=None):
        """Log debug message"""
        extra = {'stage': stage} if stage else {}
        self.logger.debug(msg, extra=extra)

    def info(self, msg, stage=None):
        """Log info message"""
        extra = {'stage': stage} if stage else {}
        self.logger.info(msg, extra=extra)

    def warning(self, msg, stage=None):
        """Log warning message"""
        extra = {'stage': stage} if stage else {}
        self.logger.warning(msg, extra=extra)

    def error(self, msg, stage=None, exc_info=False):
        """Log error message"""
        extra = {'stage': stage} if stage else {}
        self.logger.error(msg, extra=extra, exc_info=exc_info)

    def critical(self, msg, stage=None, exc_info=False):
        """Log critical message"""
        extra = {'stage': stage} if stage else {}
        self.logger.critical(msg, extra=extra, exc_info=exc_info)

    def exception(self, msg, stage=None):
        """Log exception with traceback"""
        extra = {'stage': stage} if stage else {}
        self.logger.exception(msg, extra=extra)

    def log_epoch(self, epoch, breakdown, lr, every=10):
        """Log one optimizer epoch; only every Nth epoch goes out at INFO"""
        msg = (
            f"Epoch {epoch:4d} | L_h {breakdown.l_h:.6f} | L_rank {breakdown.l_rank:.6f} | "
            f"L_sky {breakdown.l_sky:.6f} | L_total {breakdown.l_total:.6f} | lr {lr:.2e}"
        )
        if epoch == 1 or epoch % every == 0:
            self.info(msg, stage='optimize')
        else:
            self.debug(msg, stage='optimize')

    def log_render(self, mode, n_rays, n_samples, elapsed):
        """Log a render pass"""
        msg = f"Render {mode}: {n_rays} rays | {n_samples} samples | {elapsed:.2f}s"
        self.debug(msg, stage='render')

    def log_gradcheck(self, suite, max_rel_err, tol):
        """Log a finite-difference suite result"""
        msg = f"Gradcheck {suite}: max rel err {max_rel_err:.3e} (tol {tol:.0e})"
        if max_rel_err < tol:
            self.info(msg, stage='gradcheck')
        else:
            self.error(msg, stage='gradcheck')

    def log_io(self, action, path, detail=""):
        """Log a file read/write"""
        msg = f"{action}: {path}" + (f" | {detail}" if detail else "")
        self.debug(msg, stage='io')

# ==========================================
# ERROR CATEGORIES
# ==========================================
class ErrorCategory:
    """User-facing hints printed by the CLI on failure"""

    FORMAT_ERROR = {
        'title': '📁 File Format Problem',
        'description': 'An input file could not be decoded.',
        'causes': [
            'Header does not match PFM / PGM / DF32 layout',
            'Payload truncated or longer than the header says',
            'Positive PFM scale (big-endian data)'
        ],
        'solutions': [
            'Re-export the raster as little-endian PFM',
            'Check nx·ny·nz against the payload size',
            'Regenerate the file with `scene gen` or `optimize`'
        ]
    }

    VALIDATION_ERROR = {
        'title': '❌ Invalid Input',
        'description': 'Inputs violate a precondition of the operation.',
        'causes': [
            'Raster sizes do not match the grid footprint',
            'Camera outside the grid or inside a box',
            'Parameter outside its valid range'
        ],
        'solutions': [
            'Check raster dimensions against --nx/--ny',
            'Move the camera with --cam x,y,z',
            'See `--help` of the subcommand for ranges'
        ]
    }

    DIVERGENCE = {
        'title': '💥 Optimization Diverged',
        'description': 'The loss became non-finite.',
        'causes': [
            'Learning rate too high for this grid',
            'Degenerate supervision (all pixels masked)'
        ],
        'solutions': [
            'Lower --lr',
            'Inspect the partial trace written next to --trace'
        ]
    }

    SYSTEM_ERROR = {
        'title': '⚙️ Internal Error',
        'description': 'Unexpected failure.',
        'causes': [
            'Bug',
            'Out of memory for the chosen grid size'
        ],
        'solutions': [
            'Lower RENDER_CHUNK_SIZE',
            'Re-run with LOG_LEVEL=DEBUG and report the traceback'
        ]
    }

    @staticmethod
    def format_error(category):
        """Format error category into printable fields"""
        return {
            'title': category['title'],
            'description': category['description'],
            'causes': '\n'.join([f"• {c}" for c in category['causes']]),
            'solutions': '\n'.join([f"• {s}" for s in category['solutions']])
        }

    @staticmethod
    def for_exception(error):
        """Pick the hint block for an exception"""
        from errors import FormatError, DivergenceError, DensityFitError

        if isinstance(error, FormatError):
            return ErrorCategory.FORMAT_ERROR
        if isinstance(error, DivergenceError):
            return ErrorCategory.DIVERGENCE
        if isinstance(error, (DensityFitError, ValueError, OSError)):
            return ErrorCategory.VALIDATION_ERROR
        return ErrorCategory.SYSTEM_ERROR

# ==========================================
# GLOBAL LOGGER INSTANCE
# ==========================================
logger = Logger('densityfit')

# ==========================================
# HELPER FUNCTIONS
# ==========================================
def log_run_header(command, seed=None):
    """Log start of a CLI run"""
    logger.info("="*60)
    logger.info(f"🚀 densityfit {command}")
    logger.info(f"📅 Time: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    if seed is not None:
        logger.info(f"🎲 Seed: {seed}")
    logger.info(f"⚙️ Workers: {config.RENDER_WORKERS} | Chunk: {config.RENDER_CHUNK_SIZE}")
    logger.info("="*60)


def log_run_footer(command, elapsed):
    """Log end of a CLI run"""
    logger.info("="*60)
    logger.info(f"👋 {command} finished in {elapsed:.2f}s")
    logger.info("="*60)


def log_error_with_context(error, context, stage=None):
    """Log error with additional context"""
    logger.error(f"Error in {context}: {str(error)}", stage=stage)
    logger.debug(f"Traceback: {traceback.format_exc()}", stage=stage)
