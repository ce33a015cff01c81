from django.urls import path
from . import views

app_name = 'gadgets'

urlpatterns = [
    # Manifests
    path('manifests/', views.RunManifestListView.as_view(), name='manifest-list'),
    path('manifests/<uuid:pk>/', views.RunManifestDetailView.as_view(), name='manifest-detail'),

    # Experiments
    path('experiments/<slug:subcommand>/', views.run_experiment, name='run-experiment'),
    path('version/', views.version, name='version'),
]
