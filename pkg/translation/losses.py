"""Objectives of the translation network, all in PCA coefficient space."""

from autodiff import ops


def loss_recon_x(model, batch_x):
    """Autoencoder reconstruction: mean L1 between G_X(E_X(l_x)) and l_x."""
    batch_x = model.tensor(batch_x)
    return ops.l1_distance(model.decode_x(model.encode_x(batch_x)), batch_x)


def loss_recon_y(model, batch_y, noise=None):
    """Art-domain reconstruction from its own content and style codes.

    Without ``noise`` the style mean is used; with it the reparameterised sample.
    """
    batch_y = model.tensor(batch_y)
    mean, log_var = model.encode_style_y(batch_y)
    style = mean if noise is None else model.sample_style(mean, log_var, noise)
    return ops.l1_distance(model.decode_y(model.encode_content_y(batch_y), style), batch_y)


def generator_adversarial_loss(model, generated):
    return ops.scale(ops.mean(ops.log_sigmoid(model.discriminate(generated))), -1.0)


def discriminator_loss(model, real, generated):
    real_term = ops.mean(ops.log_sigmoid(model.discriminate(real)))
    fake_term = ops.mean(ops.log_sigmoid(ops.scale(model.discriminate(generated), -1.0)))
    return ops.scale(ops.add(real_term, fake_term), -1.0)


def loss_adv(model, content_codes, style_codes, real_batch):
    """Non-saturating GAN losses ``(generator, discriminator)``.

    The discriminator term sees the generated batch as a constant.
    """
    generated = model.decode_y(content_codes, style_codes)
    return (
        generator_adversarial_loss(model, generated),
        discriminator_loss(model, real_batch, generated.detach()),
    )


def loss_class(model, generated, labels):
    """Cross-entropy of the frozen classifier on generated landmarks."""
    return ops.softmax_cross_entropy(model.classify(generated), labels)


def loss_recon_c(model, generated, content_codes):
    return ops.sq_l2_distance(model.encode_content_y(generated), model.tensor(content_codes))


def loss_recon_s(model, generated, style_codes):
    mean, _ = model.encode_style_y(generated)
    return ops.sq_l2_distance(mean, model.tensor(style_codes))


def loss_kl(mean, log_var):
    """KL divergence to N(0, I), summed over code dimensions, averaged over the batch."""
    mean, log_var = ops.as_tensor(mean), ops.as_tensor(log_var)
    per_entry = ops.add_scalar(ops.sub(ops.add(ops.square(mean), ops.exp(log_var)), log_var), -1.0)
    return ops.scale(ops.sum(per_entry), 0.5 / mean.shape[0])


TERM_WEIGHTS = {
    "recon_y": "lambda_recon_y",
    "recon_c": "lambda_recon_c",
    "kl": "lambda_kl",
    "recon_s": "lambda_recon_s",
    "adv": "lambda_adv",
    "class": "lambda_class",
}


def translation_objective(model, batch_x, batch_y, labels, noise, cfg):
    """Weighted sum of the six translation-branch terms.

    Returns ``(total, terms, generated)``; content codes come from the frozen
    autoencoder and the sampled style code is a constant target for recon_s.
    """
    batch_y = model.tensor(batch_y)
    content_x = model.encode_x(batch_x).detach()
    mean, log_var = model.encode_style_y(batch_y)
    style = model.sample_style(mean, log_var, noise)
    generated = model.decode_y(content_x, style)
    terms = {
        "recon_y": ops.l1_distance(model.decode_y(model.encode_content_y(batch_y), style), batch_y),
        "recon_c": loss_recon_c(model, generated, content_x),
        "kl": loss_kl(mean, log_var),
        "recon_s": loss_recon_s(model, generated, style.detach()),
        "adv": generator_adversarial_loss(model, generated),
        "class": loss_class(model, generated, labels),
    }
    total = None
    for name, term in terms.items():
        weighted = ops.scale(term, getattr(cfg, TERM_WEIGHTS[name]))
        total = weighted if total is None else ops.add(total, weighted)
    return total, terms, generated
