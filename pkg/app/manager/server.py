#!/usr/bin/env python3
"""
Standalone shuffle manager service.
Serves the length-prefixed JSON protocol over TCP; templates are loaded from
the template directory at startup.
"""

import logging
import os
import sys

import anyio
import click
from anyio.abc import SocketAttribute
from anyio.streams.buffered import BufferedByteReceiveStream

# Add project root to path when run as a script
sys.path.append(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))

from app.manager.protocol import LENGTH, decode_payload, dispatch, encode_frame, error_response, frame_length
from app.manager.store import ShuffleManager
from app.shuffle.algorithms import load_library
from app.shuffle.errors import ProtocolError
from app.utils import load_env, manager_address, setup_logging

logger = logging.getLogger('manager_server')


async def handle_connection(manager: ShuffleManager, stream) -> None:
    peer = stream.extra(SocketAttribute.remote_address, None)
    logger.debug(f"connection from {peer}")
    receiver = BufferedByteReceiveStream(stream)
    async with stream:
        while True:
            try:
                header = await receiver.receive_exactly(LENGTH.size)
            except (anyio.IncompleteRead, anyio.EndOfStream, anyio.BrokenResourceError):
                break
            try:
                payload = await receiver.receive_exactly(frame_length(header))
                response = dispatch(manager, decode_payload(payload))
            except ProtocolError as e:
                logger.warning(f"bad frame from {peer}: {e}")
                await stream.send(encode_frame(error_response(e)))
                break
            except (anyio.IncompleteRead, anyio.EndOfStream):
                logger.warning(f"{peer} closed the connection mid-frame")
                break
            except Exception as e:
                logger.error(f"request from {peer} failed: {e}", exc_info=True)
                response = {"ok": False, "err": "invalid", "detail": str(e)}
            await stream.send(encode_frame(response))
    logger.debug(f"connection from {peer} closed")


async def serve(manager: ShuffleManager, host: str, port: int,
                task_status=anyio.TASK_STATUS_IGNORED) -> None:
    """
    Serves the manager until cancelled. Reports the bound port through
    task_status (useful with port 0).
    """
    listener = await anyio.create_tcp_listener(local_host=host, local_port=port)
    bound = listener.listeners[0].extra(SocketAttribute.local_port)
    logger.info(f"shuffle manager listening on {host}:{bound} with templates {manager.list_templates()}")
    task_status.started(bound)

    async def handler(stream):
        await handle_connection(manager, stream)

    async with listener:
        await listener.serve(handler)


def build_manager(template_dir=None, spill=None) -> ShuffleManager:
    return ShuffleManager(load_library(template_dir).values(), spill_path=spill)


@click.command()
@click.option("--host", default=None, help="Address to bind (default TESHU_MANAGER_HOST)")
@click.option("--port", default=None, type=int, help="Port to listen on (default TESHU_MANAGER_PORT)")
@click.option("--template-dir", default=None, type=click.Path(file_okay=False), help="Template directory")
@click.option("--spill", default=None, type=click.Path(dir_okay=False), help="JSON-lines record spill file")
def main(host, port, template_dir, spill) -> int:
    load_env()
    setup_logging("manager_server")
    default_host, default_port = manager_address()
    manager = build_manager(template_dir, spill)
    try:
        anyio.run(serve, manager, host or default_host, default_port if port is None else port)
    except OSError as e:
        raise click.ClickException(f"cannot bind manager: {e}")
    except KeyboardInterrupt:
        logger.info("shuffle manager stopped")
    return 0


if __name__ == "__main__":
    main()
