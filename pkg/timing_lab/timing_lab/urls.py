"""
URL configuration for the timing_lab project.

API endpoints live under ``api/v1/``; see ``gadgets.urls``.
"""
from django.contrib import admin
from django.urls import path, include

urlpatterns = [
    path('admin/', admin.site.urls),
    path('api/v1/', include('gadgets.urls')),
    path('api/auth/', include('rest_framework.urls')),
]
