import torch

from core.losses import (
    PatchDiscriminator,
    discriminator_accuracy,
    gan_losses,
    hinge_d_loss,
    hinge_g_loss,
    perceptual_loss,
    v_prediction_loss,
)


def test_v_prediction_loss_is_mse():
    pred, target = torch.zeros(1, 2, 4, 4, 4), torch.ones(1, 2, 4, 4, 4)
    assert float(v_prediction_loss(pred, target)) == 1.0


def test_perceptual_loss():
    x = torch.rand(1, 2, 3, 16, 16)
    assert float(perceptual_loss(x, x)) == 0.0
    assert float(perceptual_loss(x, 1 - x)) > 0.0


def test_hinge_losses():
    real, fake = torch.full((4,), 2.0), torch.full((4,), -2.0)
    assert float(hinge_d_loss(real, fake)) == 0.0
    assert discriminator_accuracy(real, fake) == 1.0
    assert float(hinge_g_loss(fake)) == 2.0
    assert discriminator_accuracy(fake, real) == 0.0


def test_discriminator_loss_does_not_reach_the_generator():
    disc = PatchDiscriminator(8)
    real = torch.rand(1, 2, 3, 16, 16)
    fake = torch.rand(1, 2, 3, 16, 16, requires_grad=True)
    g_loss, d_loss, accuracy = gan_losses(disc, real, fake)
    assert 0.0 <= accuracy <= 1.0
    d_loss.backward()
    assert fake.grad is None
    g_loss.backward()
    assert fake.grad is not None and fake.grad.abs().sum() > 0
