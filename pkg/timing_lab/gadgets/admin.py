from django.contrib import admin
from django.utils.html import format_html

from .models import RunManifest


@admin.register(RunManifest)
class RunManifestAdmin(admin.ModelAdmin):
    """Admin configuration for RunManifest model"""
    list_display = ['subcommand', 'seed', 'artifact_version', 'short_hash', 'delta_display', 'created_at']
    list_filter = ['subcommand', 'artifact_version', 'created_at']
    search_fields = ['subcommand', 'output_paths']
    readonly_fields = ['id', 'config_hash', 'created_at', 'updated_at']
    ordering = ['-created_at']

    fieldsets = (
        ('Run', {
            'fields': ('id', 'subcommand', 'seed', 'artifact_version')
        }),
        ('Configuration', {
            'fields': ('config', 'config_hash')
        }),
        ('Results', {
            'fields': ('summary', 'output_paths')
        }),
        ('Timestamps', {
            'fields': ('created_at', 'updated_at')
        }),
    )

    def short_hash(self, obj):
        return obj.config_hash[:12]
    short_hash.short_description = 'Config'

    def delta_display(self, obj):
        """Headline number of the run, when it has one"""
        for key in ('delta', 'accuracy', 'probability', 'granularity'):
            if key in obj.summary:
                return format_html('<code>{}={}</code>', key, obj.summary[key])
        return '-'
    delta_display.short_description = 'Result'


admin.site.site_header = 'Timing Lab Administration'
admin.site.site_title = 'Timing Lab'
