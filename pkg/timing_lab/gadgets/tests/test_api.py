from django.contrib.auth import get_user_model
from django.urls import reverse
from rest_framework import status
from rest_framework.authtoken.models import Token
from rest_framework.test import APIClient, APITestCase

from gadgets.config import ARTIFACT_VERSION, ResolvedConfig, default_config_hash
from gadgets.models import RunManifest

User = get_user_model()


class APITestCaseBase(APITestCase):
    """Base class for API tests"""

    def setUp(self):
        self.client = APIClient()
        self.user = User.objects.create_user(username='researcher', password='testpassword123')
        self.token = Token.objects.create(user=self.user)
        self.client.credentials(HTTP_AUTHORIZATION='Token ' + self.token.key)


class ExperimentAPITest(APITestCaseBase):
    """Running experiments over HTTP"""

    def test_run_plru_pa(self):
        """Test a run returns its summary and stores a manifest"""
        url = reverse('gadgets:run-experiment', kwargs={'subcommand': 'plru-pa'})
        response = self.client.post(url, {'rounds': 10}, format='json')
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertEqual(response.data['summary']['delta'], 5880)
        self.assertNotIn('rows', response.data)
        record = RunManifest.objects.get()
        self.assertEqual(str(record.id), str(response.data['manifest_id']))
        self.assertEqual(record.config_hash, response.data['config_hash'])

    def test_include_rows(self):
        """Test rows are returned on request"""
        url = reverse('gadgets:run-experiment', kwargs={'subcommand': 'plru-reorder'})
        response = self.client.post(url, {'rounds': 4, 'include_rows': True}, format='json')
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertEqual(len(response.data['rows']), 4)

    def test_config_values(self):
        """Test config keys in the body reach the run"""
        url = reverse('gadgets:run-experiment', kwargs={'subcommand': 'miss-prob'})
        data = {'config': {'seq_len': '4', 'par_len': '4', 'trials': '100'}, 'seed': 2}
        response = self.client.post(url, data, format='json')
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        self.assertEqual(response.data['summary']['probability'], 0.0)
        self.assertEqual(RunManifest.objects.get().seed, 2)

    def test_unknown_experiment(self):
        """Test an unknown subcommand is not found"""
        url = reverse('gadgets:run-experiment', kwargs={'subcommand': 'warp-drive'})
        response = self.client.post(url, {}, format='json')
        self.assertEqual(response.status_code, status.HTTP_404_NOT_FOUND)

    def test_bad_config(self):
        """Test config errors are client errors"""
        url = reverse('gadgets:run-experiment', kwargs={'subcommand': 'arith'})
        response = self.client.post(url, {'config': {'rob_size': '2'}}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        response = self.client.post(url, {'config': {'colour': 'blue'}}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)

    def test_experiment_failure(self):
        """Test an experiment that cannot run is unprocessable"""
        url = reverse('gadgets:run-experiment', kwargs={'subcommand': 'classify'})
        config = {'l1_latency': '4', 'llc_latency': '5', 'dram_latency': '6'}
        response = self.client.post(url, {'config': config, 'rounds': 0}, format='json')
        self.assertEqual(response.status_code, status.HTTP_422_UNPROCESSABLE_ENTITY)
        self.assertFalse(RunManifest.objects.exists())

    def test_requires_authentication(self):
        """Test anonymous requests are refused"""
        self.client.credentials()
        url = reverse('gadgets:run-experiment', kwargs={'subcommand': 'plru-pa'})
        response = self.client.post(url, {}, format='json')
        self.assertEqual(response.status_code, status.HTTP_401_UNAUTHORIZED)


class ManifestAPITest(APITestCaseBase):
    """Browsing stored manifests"""

    def setUp(self):
        super().setUp()
        config = ResolvedConfig().as_dict()
        self.pa = RunManifest.objects.create(subcommand='plru-pa', config=config, seed=0,
                                             artifact_version=ARTIFACT_VERSION, summary={'delta': 588})
        RunManifest.objects.create(subcommand='classify', config=config, seed=7,
                                   artifact_version=ARTIFACT_VERSION, summary={'accuracy': 1.0})

    def test_list_manifests(self):
        """Test listing all manifests"""
        response = self.client.get(reverse('gadgets:manifest-list'))
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['count'], 2)

    def test_filter_by_subcommand(self):
        """Test filtering by subcommand and seed"""
        url = reverse('gadgets:manifest-list')
        response = self.client.get(url + '?subcommand=classify')
        self.assertEqual(response.data['count'], 1)
        self.assertEqual(response.data['results'][0]['seed'], 7)
        response = self.client.get(url + '?seed=0')
        self.assertEqual(response.data['count'], 1)

    def test_manifest_detail(self):
        """Test a single manifest with its config hash"""
        url = reverse('gadgets:manifest-detail', kwargs={'pk': self.pa.id})
        response = self.client.get(url)
        self.assertEqual(response.status_code, status.HTTP_200_OK)
        self.assertEqual(response.data['config_hash'], default_config_hash())
        self.assertEqual(response.data['summary'], {'delta': 588})

    def test_version(self):
        """Test the version endpoint"""
        response = self.client.get(reverse('gadgets:version'))
        self.assertEqual(response.data['artifact_version'], ARTIFACT_VERSION)
        self.assertEqual(response.data['default_config_hash'], default_config_hash())
        self.assertIn('spectre-back', response.data['experiments'])
