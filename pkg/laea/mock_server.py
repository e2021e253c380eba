#!/usr/bin/env python3
"""
Mock OpenAI-compatible chat-completions service.

Stands in for a model server during local runs and the timing study:
1. Validates each prompt's block structure
2. Answers in the mandated JSON format, either with a canned reply (echo)
   or with the closest historical row of the prompt (nearest)
3. Optionally fails the first requests and adds artificial latency so
   retry and concurrency behaviour can be exercised

Endpoints:
- POST /chat/completions - OpenAI wire shape, reads the last user message
- GET /health - Health check endpoint

Configuration:
- Host and port come from laea/config.py (MOCK_HOST, MOCK_PORT)
"""

import asyncio
import itertools
import time
from typing import List, Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from laea.backends import echo_complete, nearest_neighbour_reply
from laea.config import config
from laea.errors import MalformedResponse, PromptStructureError

MockMode = Literal["echo", "nearest"]


# Pydantic models for the wire format
class ChatMessage(BaseModel):
    role: str
    content: str


class ChatCompletionRequest(BaseModel):
    model: str
    messages: List[ChatMessage]
    temperature: Optional[float] = 0.0


class Choice(BaseModel):
    index: int
    message: ChatMessage
    finish_reason: str = "stop"


class ChatCompletionResponse(BaseModel):
    id: str
    object: str = "chat.completion"
    created: int
    model: str
    choices: List[Choice]


class HealthResponse(BaseModel):
    status: str
    mode: str
    requests_served: int


def create_app(
    mode: MockMode = "nearest",
    canned: str = '{"Value": "0.5"}',
    fail_first: int = 0,
    fail_status: int = 503,
    latency_s: float = 0.0,
) -> FastAPI:
    """Build a mock service. Each app keeps its own request counter."""
    app = FastAPI(
        title="LAEA Mock Completion Service",
        description="OpenAI-compatible mock answering surrogate prompts",
        version="1.0.0",
    )
    counter = itertools.count(1)
    served = {"count": 0}

    @app.on_event("startup")
    async def startup_event():
        print("=" * 60)
        print("LAEA Mock Completion Service Starting...")
        print("=" * 60)
        print(f"[Config] Mode: {mode}")
        if fail_first:
            print(f"[Config] Failing first {fail_first} request(s) with HTTP {fail_status}")
        if latency_s:
            print(f"[Config] Added latency: {latency_s:.3f}s")
        print("=" * 60 + "\n")

    @app.get("/health", response_model=HealthResponse)
    async def health():
        """Health check endpoint."""
        return HealthResponse(status="healthy", mode=mode, requests_served=served["count"])

    @app.post("/chat/completions", response_model=ChatCompletionResponse)
    async def chat_completions(req: ChatCompletionRequest) -> ChatCompletionResponse:
        """Answer the last user message as a surrogate model would."""
        number = next(counter)
        if number <= fail_first:
            raise HTTPException(status_code=fail_status, detail=f"Injected failure {number}/{fail_first}")
        if latency_s:
            await asyncio.sleep(latency_s)

        prompts = [m.content for m in req.messages if m.role == "user"]
        if not prompts:
            raise HTTPException(status_code=400, detail="No user message")

        try:
            if mode == "echo":
                reply = echo_complete(canned, prompts[-1])
            else:
                reply = nearest_neighbour_reply(prompts[-1])
        except (PromptStructureError, MalformedResponse) as e:
            raise HTTPException(status_code=400, detail=f"Bad prompt: {e}")

        served["count"] += 1
        return ChatCompletionResponse(
            id=f"mock-{number}",
            created=int(time.time()),
            model=req.model,
            choices=[Choice(index=0, message=ChatMessage(role="assistant", content=reply))],
        )

    return app


def serve(mode: MockMode = "nearest", canned: str = '{"Value": "0.5"}', latency_s: float = 0.0) -> None:
    import uvicorn

    uvicorn.run(create_app(mode, canned, latency_s=latency_s), host=config.MOCK_HOST, port=config.MOCK_PORT)


if __name__ == "__main__":
    serve()
