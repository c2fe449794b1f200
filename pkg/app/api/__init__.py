"""실행 API 모듈"""
from app.api.routes import router

__all__ = ["router"]
