import numpy as np
import torch

from mixtrain.model import QNet, load_checkpoint, save_checkpoint


def test_forward_shape():
    net = QNet(obs_dim=7, hidden=(16, 8))
    out = net(torch.zeros(5, 7))
    assert out.shape == (5, 2)
    assert net.obs_dim == 7
    assert net.hidden == (16, 8)


def test_default_hidden_widths():
    net = QNet(obs_dim=4)
    assert net.hidden == (512, 512, 512)
    linears = [m for m in net.net if isinstance(m, torch.nn.Linear)]
    assert [layer.out_features for layer in linears] == [512, 512, 512, 2]


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(3)
    net = QNet(obs_dim=5, hidden=(12, 12))
    path = tmp_path / "ck.pt"
    save_checkpoint(path, net, meta={"scenario": "mini"})
    loaded, meta = load_checkpoint(path)
    assert meta == {"scenario": "mini"}
    assert loaded.obs_dim == 5
    assert loaded.hidden == (12, 12)
    assert not loaded.training  # served checkpoints run in eval mode
    x = torch.from_numpy(np.random.default_rng(0).normal(size=(4, 5)).astype(np.float32))
    with torch.no_grad():
        assert torch.equal(net(x), loaded(x))


def test_checkpoint_meta_defaults_empty(tmp_path):
    net = QNet(obs_dim=2, hidden=(4,))
    path = tmp_path / "ck.pt"
    save_checkpoint(path, net)
    _loaded, meta = load_checkpoint(path)
    assert meta == {}
