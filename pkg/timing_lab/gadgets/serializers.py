from rest_framework import serializers

from .cache import ReplacementPolicy
from .models import RunManifest
from .pipeline import OpKind

KIND_CHOICES = [kind.value.lower() for kind in (OpKind.ADD, OpKind.MUL, OpKind.DIV)]


class MicroarchConfigSerializer(serializers.Serializer):
    """Validates the machine keys of a config file"""
    issue_width = serializers.IntegerField(min_value=1)
    rob_size = serializers.IntegerField(min_value=1)
    add_latency = serializers.IntegerField(min_value=1)
    add_units = serializers.IntegerField(min_value=1)
    add_recip_throughput = serializers.IntegerField(min_value=1)
    mul_latency = serializers.IntegerField(min_value=1)
    mul_units = serializers.IntegerField(min_value=1)
    mul_recip_throughput = serializers.IntegerField(min_value=1)
    div_latency = serializers.IntegerField(min_value=1)
    div_units = serializers.IntegerField(min_value=1)
    div_recip_throughput = serializers.IntegerField(min_value=1)
    load_units = serializers.IntegerField(min_value=1)
    load_recip_throughput = serializers.IntegerField(min_value=1)
    branch_latency = serializers.IntegerField(min_value=1)
    branch_units = serializers.IntegerField(min_value=1)
    branch_recip_throughput = serializers.IntegerField(min_value=1)
    const_latency = serializers.IntegerField(min_value=1)
    const_units = serializers.IntegerField(min_value=1)
    const_recip_throughput = serializers.IntegerField(min_value=1)
    l1_latency = serializers.IntegerField(min_value=1)
    llc_latency = serializers.IntegerField(min_value=1)
    dram_latency = serializers.IntegerField(min_value=1)
    transient_fill_persists = serializers.BooleanField()
    resolve_delay = serializers.IntegerField(min_value=0)
    load_jitter = serializers.IntegerField(min_value=0)
    flush_interval = serializers.IntegerField(min_value=0)
    flush_penalty = serializers.IntegerField(min_value=0)
    seed = serializers.IntegerField(min_value=0, max_value=2**64 - 1)

    def validate(self, attrs):
        if attrs['rob_size'] < attrs['issue_width']:
            raise serializers.ValidationError("rob_size must be at least issue_width")
        if not attrs['l1_latency'] < attrs['llc_latency'] < attrs['dram_latency']:
            raise serializers.ValidationError("latencies must increase from l1 to llc to dram")
        return attrs


class CacheConfigSerializer(serializers.Serializer):
    """Validates the cache geometry keys"""
    cache_sets = serializers.IntegerField(min_value=1)
    cache_ways = serializers.IntegerField(min_value=1)
    cache_policy = serializers.ChoiceField(choices=[p.value for p in ReplacementPolicy])
    cache_levels = serializers.ChoiceField(choices=[1, 2])
    cache_inclusive = serializers.BooleanField()
    llc_sets = serializers.IntegerField(min_value=1)
    llc_ways = serializers.IntegerField(min_value=1)
    weak_fill = serializers.BooleanField()

    def validate_cache_ways(self, value):
        if value & (value - 1):
            raise serializers.ValidationError("way count must be a power of two")
        return value


class ExperimentParamsSerializer(serializers.Serializer):
    """Validates experiment knobs; empty values fall back to per-subcommand defaults"""
    rounds = serializers.IntegerField(min_value=0, allow_null=True)
    trials = serializers.IntegerField(min_value=1, allow_null=True)
    iterations = serializers.IntegerField(min_value=0)
    n_sets = serializers.IntegerField(min_value=2)
    seq_len = serializers.IntegerField(min_value=1)
    par_len = serializers.IntegerField(min_value=0)
    prefetch_enabled = serializers.BooleanField()
    prefetch_distance = serializers.IntegerField(min_value=1)
    misalign_delay = serializers.IntegerField(min_value=0, allow_null=True)
    arb_policy = serializers.ChoiceField(choices=[p.value for p in ReplacementPolicy])
    k_div = serializers.IntegerField(min_value=1)
    add_buffer_len = serializers.IntegerField(min_value=0, allow_null=True)
    rob_guard = serializers.BooleanField()
    timer_granularity = serializers.IntegerField(min_value=1)
    timer_jitter = serializers.IntegerField(min_value=0)
    secret_bits = serializers.IntegerField(min_value=0)
    calibration_trials = serializers.IntegerField(min_value=2)
    ref_kind = serializers.ChoiceField(choices=KIND_CHOICES)
    target_kind = serializers.ChoiceField(choices=KIND_CHOICES)
    max_target_len = serializers.IntegerField(min_value=1)
    use_racing_fix = serializers.BooleanField()
    present = serializers.BooleanField()
    order = serializers.ChoiceField(choices=['AFirst', 'BFirst'])
    prepared = serializers.ChoiceField(choices=['', 'L1Hit', 'LLCMiss'], allow_blank=True)
    race_kind = serializers.ChoiceField(choices=['presence', 'reorder'])
    ref_len = serializers.IntegerField(min_value=1)
    target_len = serializers.IntegerField(min_value=1)
    clock_ghz = serializers.FloatField(min_value=0.001)

    def validate(self, attrs):
        if attrs['seq_len'] + attrs['par_len'] == 0:
            raise serializers.ValidationError("a magnifier round needs at least one access")
        return attrs


class RunManifestSerializer(serializers.ModelSerializer):
    """Serializer for stored run manifests"""
    config_hash = serializers.ReadOnlyField()

    class Meta:
        model = RunManifest
        fields = [
            'id', 'subcommand', 'config', 'config_hash', 'seed', 'output_paths',
            'artifact_version', 'summary', 'created_at', 'updated_at'
        ]
        read_only_fields = fields


class ExperimentRequestSerializer(serializers.Serializer):
    """Body of an experiment run request"""
    config = serializers.DictField(child=serializers.CharField(allow_blank=True), required=False, default=dict)
    seed = serializers.IntegerField(min_value=0, required=False)
    rounds = serializers.IntegerField(min_value=0, required=False)
    include_rows = serializers.BooleanField(default=False)
