from rest_framework import generics, status
from rest_framework.decorators import api_view, permission_classes
from rest_framework.response import Response
from rest_framework.permissions import IsAuthenticated
from django_filters import rest_framework as filters
import logging

from .config import ARTIFACT_VERSION, default_config_hash, resolve
from .exceptions import ConfigError, GadgetError
from .models import RunManifest
from .reporting import build_manifest, save_manifest_record
from .runners import SUBCOMMANDS, run_subcommand
from .serializers import ExperimentRequestSerializer, RunManifestSerializer

logger = logging.getLogger(__name__)


class RunManifestFilter(filters.FilterSet):
    subcommand = filters.ChoiceFilter(choices=RunManifest.SUBCOMMAND_CHOICES)
    seed = filters.NumberFilter()
    created_after = filters.DateTimeFilter(field_name='created_at', lookup_expr='gte')

    class Meta:
        model = RunManifest
        fields = ['subcommand', 'seed', 'artifact_version']


class RunManifestListView(generics.ListAPIView):
    """List stored run manifests"""
    queryset = RunManifest.objects.all()
    serializer_class = RunManifestSerializer
    permission_classes = [IsAuthenticated]
    filter_backends = [filters.DjangoFilterBackend]
    filterset_class = RunManifestFilter


class RunManifestDetailView(generics.RetrieveAPIView):
    """Run manifest detail endpoint"""
    queryset = RunManifest.objects.all()
    serializer_class = RunManifestSerializer
    permission_classes = [IsAuthenticated]


@api_view(['POST'])
@permission_classes([IsAuthenticated])
def run_experiment(request, subcommand):
    """Run one experiment from a JSON body of config keys"""
    if subcommand not in SUBCOMMANDS:
        return Response({'error': f"Unknown experiment '{subcommand}'"}, status=status.HTTP_404_NOT_FOUND)

    serializer = ExperimentRequestSerializer(data=request.data)
    serializer.is_valid(raise_exception=True)
    data = serializer.validated_data
    values = dict(data.get('config', {}))
    for key in ('seed', 'rounds'):
        if key in data:
            values[key] = data[key]

    try:
        config = resolve(values)
        output = run_subcommand(subcommand, config)
    except ConfigError as exc:
        return Response({'error': str(exc)}, status=status.HTTP_400_BAD_REQUEST)
    except GadgetError as exc:
        logger.error(f"experiment {subcommand} failed: {exc}")
        return Response({'error': str(exc)}, status=status.HTTP_422_UNPROCESSABLE_ENTITY)

    manifest = build_manifest(subcommand, config, [], output.summary)
    record = save_manifest_record(manifest)
    body = {
        'subcommand': subcommand,
        'summary': output.summary,
        'manifest_id': record.id if record else None,
        'config_hash': manifest['config_hash'],
    }
    if data['include_rows']:
        body['rows'] = output.rows
        body.update({name: rows for name, rows in output.tables.items()})
    return Response(body, status=status.HTTP_201_CREATED)


@api_view(['GET'])
@permission_classes([IsAuthenticated])
def version(request):
    """Artifact version and the hash of the default configuration"""
    return Response({
        'artifact_version': ARTIFACT_VERSION,
        'default_config_hash': default_config_hash(),
        'experiments': sorted(SUBCOMMANDS),
    })
