#!/usr/bin/env python3
"""Record a short demonstration over the WebSocket API and start an LfD run.

Needs a running server (`tissue serve --port 8765`) and the `websockets`
package. The grippers trace small circles for ten simulated seconds.
"""

import argparse
import asyncio
import json
import math

import websockets


async def main(url, seconds):
    async with websockets.connect(url, max_size=None) as ws:
        hello = json.loads(await ws.recv())
        print("connected as client", hello["client_id"], "scene", hello["scene_hash"])

        async def request(msg):
            await ws.send(json.dumps(msg))
            while True:
                reply = json.loads(await ws.recv())
                if reply["type"] in ("ack", "error") and reply.get("of") == msg["type"]:
                    if reply["type"] == "error":
                        raise RuntimeError(reply["message"])
                    return reply

        await request({"type": "configure", "mode": "teleop"})
        await request({"type": "start_recording", "annotation": "circle sample"})
        frames = 0
        while frames < seconds * 30:
            msg = json.loads(await ws.recv())
            if msg["type"] != "state_frame":
                continue
            frames += 1
            a = 2 * math.pi * frames / 90
            await ws.send(json.dumps({"type": "gripper_command",
                                      "displacements": [[2 * math.cos(a), 2 * math.sin(a)],
                                                        [-2 * math.cos(a), 2 * math.sin(a)]]}))
        done = await request({"type": "stop_recording", "name": "circle"})
        print("recorded", done["frames"], "frames; download at", done["download"])

        await request({"type": "configure", "mode": "idle"})
        run = await request({"type": "start_run", "kind": "lfd", "params": {"max_actions": 20, "epochs": 20}})
        while True:
            msg = json.loads(await ws.recv())
            if msg["type"] == "run_progress" and msg["run_id"] == run["run_id"] and msg["done"]:
                print("run finished:", {k: msg[k] for k in ("actions", "final_error", "threshold_met")})
                return


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--url", default="ws://127.0.0.1:8765/ws")
    ap.add_argument("--seconds", type=int, default=10)
    args = ap.parse_args()
    asyncio.run(main(args.url, args.seconds))
