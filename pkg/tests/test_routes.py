'''
Tests the HTTP routes through the Flask test client.
'''
import pytest

from app import create_app


@pytest.fixture
def client():
    app = create_app()
    app.config.update(TESTING=True)
    return app.test_client()


def test_health(client):
    response = client.get('/health')
    assert response.status_code == 200
    assert response.get_json() == {'status': 'ok'}


def test_estimate(client):
    response = client.post('/estimate', json={
        'dgp': {'name': 'DGP-D', 'n': 300}, 'x0': [0, 1], 'estimator': 'naive', 'out': '/tmp/ignored.json',
    })
    assert response.status_code == 200
    body = response.get_json()
    assert body['kind'] == 'estimate'
    assert len(body['results']['estimates']) == 2
    assert 'out' not in body['config']


def test_estimate_from_columns(client):
    columns = {
        'y': [1.0, 2.0, 2.5, 4.0, 4.5, 6.5, 7.0, 8.5],
        'x': [0.0, 1.0, 1.5, 3.0, 3.5, 5.0, 6.0, 7.0],
        'z1': [0.3, 0.1, 0.9, 0.2, 0.8, 0.5, 0.4, 0.7],
        'w1': [0.2, 0.5, 0.1, 0.9, 0.4, 0.3, 0.8, 0.6],
    }
    response = client.post('/estimate', json={'columns': columns, 'x_discrete': False, 'x0': [2.0], 'estimator': 'naive'})
    assert response.status_code == 200
    assert response.get_json()['results']['n'] == 8


def test_missing_x0_is_rejected(client):
    response = client.post('/estimate', json={'dgp': {'name': 'DGP-D', 'n': 300}})
    assert response.status_code == 400
    assert response.get_json()['error'] == 'ConfigError'


def test_body_must_be_json(client):
    response = client.post('/estimate', data='x0=1', content_type='text/plain')
    assert response.status_code == 400


def test_estimation_failure_is_unprocessable(client):
    response = client.post('/estimate', json={
        'dgp': {'name': 'DGP-C', 'n': 200}, 'x0': [0.5], 'estimator': 'semiparametric-discrete', 'bandwidth': 0.8,
    })
    assert response.status_code == 422
    assert response.get_json()['error'] == 'NoObservationsAtLevel'


def test_simulate(client):
    response = client.post('/simulate', json={'dgp': {'name': 'DGP-C', 'n': 25}, 'seed': 1})
    assert response.status_code == 200
    columns = response.get_json()['results']['columns']
    assert len(columns['y']) == 25


def test_diagnose(client):
    response = client.post('/diagnose', json={'dgp': {'name': 'DGP-D', 'n': 300}, 'x0': [1], 'bandwidth': 0.8})
    assert response.status_code == 200
    results = response.get_json()['results']
    assert 'small_ball' in results
    assert '1' in results['support_coverage']
